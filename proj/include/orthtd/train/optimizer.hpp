// AdamW with decoupled weight decay and per-group learning rates, plus the
// warm-up + cosine learning-rate schedule.
#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "orthtd/numerics/parameter.hpp"

namespace orthtd {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamWConfig {
  double lr_main = 1e-4;
  double lr_text = 1e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamWConfig&) const = default;

  double lr_for(ParamGroup g) const { return g == ParamGroup::text_encoder ? lr_text : lr_main; }
};

template <typename T>
class AdamW {
 public:
  AdamW(ParameterStore<T>& params, AdamWConfig config) : params_(params), config_(config) {
    if (config.lr_main <= 0 || config.lr_text <= 0) throw std::invalid_argument("adamw: learning rates must be positive");
    for (const auto& p : params_.all()) {
      first_.emplace_back(p.tensor.numel(), T(0));
      second_.emplace_back(p.tensor.numel(), T(0));
    }
  }

  /// One update with every group rate scaled by `lr_multiplier`. Non-finite
  /// gradients abort the step before any parameter changes.
  void step(double lr_multiplier = 1.0) {
    auto& all = params_.all();
    for (const auto& p : all) {
      if (!p.tensor.has_grad()) continue;
      for (T g : p.tensor.grad())
        if (!std::isfinite(static_cast<double>(g))) throw NumericError("adamw: non-finite gradient in parameter '" + p.name + "'");
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < all.size(); ++i) {
      auto& p = all[i];
      auto& w = p.tensor.data();
      const auto& g = p.tensor.grad();
      const double lr = config_.lr_for(p.group) * lr_multiplier;
      const T decay = static_cast<T>(1.0 - lr * config_.weight_decay);
      auto& m = first_[i];
      auto& v = second_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        w[j] *= decay;
        m[j] = static_cast<T>(config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j]);
        v[j] = static_cast<T>(config_.beta2 * v[j] + (1.0 - config_.beta2) * static_cast<double>(g[j]) * g[j]);
        const double m_hat = m[j] / c1, v_hat = v[j] / c2;
        w[j] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + config_.eps));
      }
    }
  }

  std::size_t steps() const { return steps_; }
  void set_steps(std::size_t s) { steps_ = s; }
  std::vector<std::vector<T>>& first_moments() { return first_; }
  std::vector<std::vector<T>>& second_moments() { return second_; }
  const std::vector<std::vector<T>>& first_moments() const { return first_; }
  const std::vector<std::vector<T>>& second_moments() const { return second_; }
  const AdamWConfig& config() const { return config_; }

 private:
  ParameterStore<T>& params_;
  AdamWConfig config_;
  std::vector<std::vector<T>> first_;
  std::vector<std::vector<T>> second_;
  std::size_t steps_ = 0;
};

/// Linear ramp 0 -> 1 over the first warmup_fraction of steps, then half-cosine 1 -> 0.
inline double cosine_lr(std::size_t step, std::size_t total_steps, double warmup_fraction) {
  if (total_steps == 0 || step > total_steps)
    throw std::out_of_range("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
    throw std::invalid_argument("cosine_lr: warmup_fraction must lie in [0, 1)");
  const double warmup = warmup_fraction * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s < warmup) return s / warmup;
  const double progress = (s - warmup) / (static_cast<double>(total_steps) - warmup);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace orthtd
