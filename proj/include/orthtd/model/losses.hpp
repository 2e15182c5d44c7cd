// Asymmetric classification loss, the combined objective, and
// uncertainty-based task weighting.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "orthtd/numerics/ops.hpp"

namespace orthtd {

struct LossConfig {
  double gamma_pos = 0.0;
  double gamma_neg = 4.0;
  double margin = 0.05;
  double lambda_ortho = 0.1;
  double clamp_eps = 1e-7;

  bool operator==(const LossConfig&) const = default;

  void validate() const {
    if (gamma_pos < 0 || gamma_neg < 0) throw std::invalid_argument("loss: focusing exponents must be nonnegative");
    if (!(margin >= 0 && margin < 1)) throw std::invalid_argument("loss: margin must lie in [0, 1)");
    if (lambda_ortho < 0) throw std::invalid_argument("loss: lambda_ortho must be nonnegative");
    if (!(clamp_eps > 0 && clamp_eps < 0.5)) throw std::invalid_argument("loss: clamp_eps must lie in (0, 0.5)");
  }
};

/// Mean over records with weight 1 of
///   y = 1: -(1 - p)^gamma_pos log p
///   y = 0: -p_m^gamma_neg log(1 - p_m),  p_m = max(p - margin, 0)
/// with p clamped to [eps, 1 - eps]. `weight` (optional) masks records; a
/// batch with no weighted records yields 0.
template <typename T>
Tensor<T> asymmetric_loss(const Tensor<T>& probs, std::span<const std::uint8_t> labels, const LossConfig& cfg,
                          std::span<const std::uint8_t> weight = {}) {
  const std::size_t n = probs.numel();
  if (labels.size() != n) throw ShapeError("asymmetric_loss: " + std::to_string(labels.size()) + " labels for " +
                                           std::to_string(n) + " probabilities");
  if (!weight.empty() && weight.size() != n) throw ShapeError("asymmetric_loss: mask size mismatch");
  for (auto y : labels)
    if (y > 1) throw std::invalid_argument("asymmetric_loss: labels must be 0 or 1");

  const double eps = cfg.clamp_eps, m = cfg.margin, gp = cfg.gamma_pos, gn = cfg.gamma_neg;
  std::vector<T> dloss(n, T(0));
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!weight.empty() && !weight[i]) continue;
    ++count;
    const double raw = static_cast<double>(probs.data()[i]);
    const double p = std::clamp(raw, eps, 1.0 - eps);
    const bool inside = raw > eps && raw < 1.0 - eps;
    double loss = 0.0, grad = 0.0;
    if (labels[i]) {
      const double focus = gp > 0 ? std::pow(1.0 - p, gp) : 1.0;
      loss = -focus * std::log(p);
      grad = -focus / p + (gp > 0 ? gp * std::pow(1.0 - p, gp - 1.0) * std::log(p) : 0.0);
    } else {
      const double pm = std::max(p - m, 0.0);
      if (pm > 0.0) {
        const double focus = gn > 0 ? std::pow(pm, gn) : 1.0;
        loss = -focus * std::log(1.0 - pm);
        grad = focus / (1.0 - pm) - (gn > 0 ? gn * std::pow(pm, gn - 1.0) * std::log(1.0 - pm) : 0.0);
      }
    }
    total += loss;
    dloss[i] = inside ? static_cast<T>(grad) : T(0);
  }
  const double mean = count ? total / static_cast<double>(count) : 0.0;
  const T inv = count ? T(1) / T(count) : T(0);
  for (auto& g : dloss) g *= inv;
  return Tensor<T>::make_result({1}, {static_cast<T>(mean)}, {probs}, [dloss = std::move(dloss)](TensorNode<T>& self) {
    if (T* gp = parent_grad(self, 0))
      for (std::size_t i = 0; i < dloss.size(); ++i) gp[i] += self.grad[0] * dloss[i];
  });
}

/// mean_k(task_losses) + lambda * L_ortho; the regularizer is skipped when absent.
template <typename T>
Tensor<T> combined_loss(const std::vector<Tensor<T>>& task_losses, const std::optional<Tensor<T>>& ortho,
                        double lambda_ortho) {
  if (task_losses.empty()) throw std::invalid_argument("combined_loss: no task losses");
  auto task = scale(add_scalars(task_losses), T(1) / T(task_losses.size()));
  if (!ortho || lambda_ortho == 0.0) return task;
  return add(task, scale(*ortho, static_cast<T>(lambda_ortho)));
}

/// sum_k exp(-s_k) L_k + s_k with s the learnable log-variances.
template <typename T>
Tensor<T> uncertainty_weighted_loss(const std::vector<Tensor<T>>& task_losses, const Tensor<T>& log_vars) {
  if (task_losses.size() != log_vars.numel())
    throw ShapeError("uncertainty_weighted_loss: " + std::to_string(task_losses.size()) + " losses for " +
                     std::to_string(log_vars.numel()) + " log-variances");
  std::vector<Tensor<T>> terms;
  for (std::size_t k = 0; k < task_losses.size(); ++k) {
    auto s = element(log_vars, k);
    terms.push_back(add(mul(exp(scale(s, T(-1))), task_losses[k]), s));
  }
  return add_scalars(terms);
}

}  // namespace orthtd
