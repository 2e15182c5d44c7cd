// Central finite-difference gradient checker.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "orthtd/numerics/tensor.hpp"

namespace orthtd {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

struct GradCheckInput {
  std::string name;
  Tensor<double> tensor;
};

/// Compares the analytic gradient of `loss` w.r.t. every coordinate of
/// `inputs` against (f(x+eps) - f(x-eps)) / (2 eps). Relative error uses the
/// denominator max(|analytic|, |numeric|, floor); deep graphs need a larger
/// floor because roundoff in the difference quotient is about 1e-16 |f| / eps.
inline GradCheckResult finite_diff_check(const std::function<Tensor<double>()>& loss,
                                         std::vector<GradCheckInput> inputs, double eps = 1e-5,
                                         double floor = 1e-8) {
  for (auto& in : inputs) {
    in.tensor.set_requires_grad(true);
    in.tensor.zero_grad();
  }
  auto value = loss();
  if (!std::isfinite(value.item())) throw std::domain_error("finite_diff_check: non-finite loss at base point");
  value.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) analytic.push_back(in.tensor.grad());

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& data = inputs[t].tensor.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double origin = data[i];
      data[i] = origin + eps;
      const double plus = loss().item();
      data[i] = origin - eps;
      const double minus = loss().item();
      data[i] = origin;
      if (!std::isfinite(plus) || !std::isfinite(minus))
        throw std::domain_error("finite_diff_check: non-finite loss probing " + inputs[t].name + "[" +
                                std::to_string(i) + "]");
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[t][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++result.coordinates;
      if (rel > result.max_rel_error || result.coordinates == 1) {
        result.max_rel_error = rel;
        result.worst_tensor = inputs[t].name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace orthtd
