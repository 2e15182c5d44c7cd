// Synthetic multimodal cohorts with known shared / task-specific latent
// structure. Every feature modality is a noisy function of the concatenated
// latent vector [z_shared; z_1; ...; z_K]; task k's label depends only on
// z_shared and z_k.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "orthtd/data/cohort.hpp"

namespace orthtd {

struct SyntheticSpec {
  std::size_t n_patients = 4000;
  std::size_t shared_latent_dim = 4;
  std::vector<std::size_t> specific_latent_dims{2, 2, 2, 2};
  std::vector<double> target_prevalence{0.128, 0.109, 0.009, 0.015};
  std::vector<std::string> task_names{"any_epco", "ppc", "aki", "icu"};
  double shared_signal_weight = 1.5;
  double specific_signal_weight = 1.5;
  double feature_noise_std = 0.5;
  int vocab_size = 64;
  std::uint64_t seed = 1;

  std::size_t n_continuous = 16;
  std::vector<int> categorical_cardinalities{4, 4, 3};
  std::size_t text_max_tokens = 12;
  double missing_rate = 0.05;
  bool any_as_or = false;

  bool operator==(const SyntheticSpec&) const = default;

  std::size_t task_count() const { return target_prevalence.size(); }

  void validate() const {
    const auto k = target_prevalence.size();
    if (n_patients == 0) throw std::invalid_argument("synthetic: n_patients must be positive");
    if (k == 0) throw std::invalid_argument("synthetic: at least one task is required");
    if (shared_latent_dim == 0) throw std::invalid_argument("synthetic: shared_latent_dim must be positive");
    if (specific_latent_dims.size() != k || task_names.size() != k)
      throw std::invalid_argument("synthetic: specific_latent_dims, task_names and target_prevalence need equal length");
    for (auto t : specific_latent_dims)
      if (t == 0) throw std::invalid_argument("synthetic: specific latent dims must be positive");
    for (double p : target_prevalence)
      if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("synthetic: prevalences must lie in (0, 1)");
    if (shared_signal_weight < 0 || specific_signal_weight < 0 || feature_noise_std < 0)
      throw std::invalid_argument("synthetic: weights and noise must be nonnegative");
    if (vocab_size < 3) throw std::invalid_argument("synthetic: vocab_size must exceed the two reserved ids");
    if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw std::invalid_argument("synthetic: missing_rate must lie in [0, 1)");
    for (int c : categorical_cardinalities)
      if (c < 2) throw std::invalid_argument("synthetic: categorical cardinalities must be >= 2");
    if (any_as_or && k < 2) throw std::invalid_argument("synthetic: any_as_or needs at least two tasks");
  }
};

struct GroundTruthLatents {
  std::vector<std::vector<double>> shared;                 // [patient][s]
  std::vector<std::vector<std::vector<double>>> specific;  // [patient][task][t_k]
  std::vector<double> intercepts;                          // b_k
  std::vector<std::vector<double>> shared_loadings;        // u_k
  std::vector<std::vector<double>> specific_loadings;      // v_k
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kPrevalenceTolerance = 0.005;

namespace detail {

inline double logistic(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

inline std::vector<double> unit_vector(std::size_t dim, std::normal_distribution<double>& normal, std::mt19937_64& rng) {
  std::vector<double> v(dim);
  double norm = 0;
  for (auto& x : v) {
    x = normal(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

/// Bisection on the intercept so that mean(u_i < sigmoid(score_i + b)) lands as
/// close to target as the sample size allows; fails if the best is outside tolerance.
inline double calibrate_intercept(const std::vector<double>& scores, const std::vector<double>& uniforms, double target,
                                  const std::string& task) {
  auto prevalence = [&](double b) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) pos += uniforms[i] < logistic(scores[i] + b);
    return static_cast<double>(pos) / static_cast<double>(scores.size());
  };
  // Realized prevalence is a step function of b; half a step is the best any intercept can do.
  const double resolution = 0.5 / static_cast<double>(scores.size());
  double lo = -60.0, hi = 60.0, best = 0.0, best_gap = INFINITY;
  for (int iter = 0; iter < 100; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double p = prevalence(mid);
    if (std::abs(p - target) < best_gap) {
      best_gap = std::abs(p - target);
      best = mid;
    }
    if (best_gap <= resolution) break;
    (p < target ? lo : hi) = mid;
  }
  if (best_gap <= kPrevalenceTolerance) return best;
  throw CalibrationError("synthetic: intercept calibration for task '" + task + "' did not reach +-" +
                         std::to_string(kPrevalenceTolerance) + " of target " + std::to_string(target) +
                         " in 100 bisection steps");
}

}  // namespace detail

inline FeatureSchema synthetic_schema(const SyntheticSpec& spec) {
  FeatureSchema schema;
  for (std::size_t i = 0; i < spec.categorical_cardinalities.size(); ++i)
    schema.categorical.push_back({"cat_" + std::to_string(i + 1), spec.categorical_cardinalities[i]});
  for (std::size_t i = 0; i < spec.n_continuous; ++i) {
    std::string idx = std::to_string(i + 1);
    schema.continuous.push_back("lab_" + std::string(2 - std::min<std::size_t>(2, idx.size()), '0') + idx);
  }
  if (spec.text_max_tokens > 0) schema.text.push_back({"note", spec.text_max_tokens});
  schema.vitals = {{"map", "mmHg"}, {"hr", "bpm"}};
  schema.tasks = spec.task_names;
  schema.vocab_size = spec.vocab_size;
  return schema;
}

/// Draws a cohort and the latents that produced it; identical specs give identical output.
inline std::pair<Cohort, GroundTruthLatents> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_patients, k_tasks = spec.task_count(), s_dim = spec.shared_latent_dim;
  std::size_t latent_dim = s_dim;
  for (auto t : spec.specific_latent_dims) latent_dim += t;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  // Fixed structure.
  const double mix_scale = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  std::vector<std::vector<double>> continuous_mix(spec.n_continuous, std::vector<double>(latent_dim));
  for (auto& row : continuous_mix)
    for (auto& w : row) w = normal(rng) * mix_scale;
  std::vector<std::vector<double>> categorical_mix;
  for (std::size_t i = 0; i < spec.categorical_cardinalities.size(); ++i)
    categorical_mix.push_back(detail::unit_vector(latent_dim, normal, rng));
  std::vector<std::vector<double>> token_mix(static_cast<std::size_t>(spec.vocab_size), std::vector<double>(latent_dim));
  for (auto& row : token_mix)
    for (auto& w : row) w = normal(rng) * mix_scale;
  struct VitalShape {
    double base, latent_scale, amplitude, period, noise;
  };
  const VitalShape vital_shapes[2] = {{78.0, 9.0, 6.0, 45.0, 2.0}, {75.0, 10.0, 5.0, 60.0, 3.0}};
  std::vector<std::vector<double>> vital_mix;
  for (int c = 0; c < 2; ++c) vital_mix.push_back(detail::unit_vector(latent_dim, normal, rng));

  GroundTruthLatents truth;
  for (std::size_t k = 0; k < k_tasks; ++k) {
    truth.shared_loadings.push_back(detail::unit_vector(s_dim, normal, rng));
    truth.specific_loadings.push_back(detail::unit_vector(spec.specific_latent_dims[k], normal, rng));
  }

  Cohort cohort;
  cohort.schema = synthetic_schema(spec);
  cohort.provenance = Provenance::synthetic;
  cohort.records.resize(n);
  truth.shared.resize(n);
  truth.specific.resize(n);

  std::vector<std::vector<double>> categorical_scores(spec.categorical_cardinalities.size(), std::vector<double>(n));
  std::vector<std::vector<double>> label_uniforms(k_tasks, std::vector<double>(n));
  std::vector<double> token_weights(static_cast<std::size_t>(spec.vocab_size - 2));
  std::uniform_int_distribution<std::size_t> length_dist(0, spec.text_max_tokens);
  std::uniform_int_distribution<int> duration_steps(12, 48);  // 5-minute samples, 1-4 hours

  for (std::size_t i = 0; i < n; ++i) {
    auto& r = cohort.records[i];
    r.id = i;
    std::vector<double> z;
    z.reserve(latent_dim);
    truth.shared[i].resize(s_dim);
    for (auto& v : truth.shared[i]) z.push_back(v = normal(rng));
    truth.specific[i].resize(k_tasks);
    for (std::size_t k = 0; k < k_tasks; ++k) {
      truth.specific[i][k].resize(spec.specific_latent_dims[k]);
      for (auto& v : truth.specific[i][k]) z.push_back(v = normal(rng));
    }

    for (std::size_t j = 0; j < spec.n_continuous; ++j) {
      const double value = detail::dot(continuous_mix[j], z) + spec.feature_noise_std * normal(rng);
      const bool missing = uniform(rng) < spec.missing_rate;
      r.continuous.push_back(missing ? 0.0 : value);
      r.continuous_missing.push_back(missing ? 1 : 0);
    }
    for (std::size_t j = 0; j < categorical_mix.size(); ++j)
      categorical_scores[j][i] = detail::dot(categorical_mix[j], z) + spec.feature_noise_std * normal(rng);

    if (spec.text_max_tokens > 0) {
      for (std::size_t w = 0; w < token_weights.size(); ++w) token_weights[w] = std::exp(detail::dot(token_mix[w + 2], z));
      std::discrete_distribution<int> tokens(token_weights.begin(), token_weights.end());
      const auto length = length_dist(rng);
      std::vector<int> note;
      for (std::size_t t = 0; t < length; ++t) note.push_back(tokens(rng) + 2);
      r.text.push_back(std::move(note));
    }

    for (int c = 0; c < 2; ++c) {
      const auto& shape = vital_shapes[c];
      const double level = shape.base + shape.latent_scale * detail::dot(vital_mix[c], z);
      const double phase = 2.0 * M_PI * uniform(rng);
      const int steps = duration_steps(rng);
      const bool missing = uniform(rng) < spec.missing_rate;
      VitalSeries series;
      for (int t = 0; t <= steps; ++t) {
        const double minutes = 5.0 * t;
        const double value = level + shape.amplitude * std::sin(2.0 * M_PI * minutes / shape.period + phase) +
                             shape.noise * normal(rng);
        if (!missing) series.push_back({minutes, value});
      }
      r.vitals.push_back(std::move(series));
    }

    for (std::size_t k = 0; k < k_tasks; ++k) label_uniforms[k][i] = uniform(rng);
  }

  // Categorical ids are empirical quantile buckets of their latent mixes.
  for (std::size_t j = 0; j < categorical_mix.size(); ++j) {
    const int card = spec.categorical_cardinalities[j];
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return categorical_scores[j][a] < categorical_scores[j][b]; });
    for (std::size_t rank = 0; rank < n; ++rank)
      cohort.records[order[rank]].categorical.push_back(static_cast<int>(rank * static_cast<std::size_t>(card) / n));
  }

  truth.intercepts.assign(k_tasks, 0.0);
  for (auto& r : cohort.records) {
    r.labels.assign(k_tasks, 0);
    r.label_present.assign(k_tasks, 1);
  }
  for (std::size_t k = spec.any_as_or ? 1 : 0; k < k_tasks; ++k) {
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i)
      scores[i] = spec.shared_signal_weight * detail::dot(truth.shared_loadings[k], truth.shared[i]) +
                  spec.specific_signal_weight * detail::dot(truth.specific_loadings[k], truth.specific[i][k]);
    const double b = detail::calibrate_intercept(scores, label_uniforms[k], spec.target_prevalence[k], spec.task_names[k]);
    truth.intercepts[k] = b;
    for (std::size_t i = 0; i < n; ++i)
      cohort.records[i].labels[k] = label_uniforms[k][i] < detail::logistic(scores[i] + b) ? 1 : 0;
  }
  if (spec.any_as_or) {
    truth.intercepts[0] = std::nan("");
    for (auto& r : cohort.records)
      r.labels[0] = std::any_of(r.labels.begin() + 1, r.labels.end(), [](auto l) { return l != 0; }) ? 1 : 0;
  }
  return {std::move(cohort), std::move(truth)};
}

}  // namespace orthtd
