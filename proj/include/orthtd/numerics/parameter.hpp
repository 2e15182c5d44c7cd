// Named trainable tensors, grouped for per-group learning rates.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "orthtd/numerics/tensor.hpp"

namespace orthtd {

enum class ParamGroup : std::uint8_t { main, text_encoder };

inline std::string_view to_string(ParamGroup g) { return g == ParamGroup::main ? "main" : "text_encoder"; }

inline ParamGroup param_group_from_string(std::string_view s) {
  if (s == "main") return ParamGroup::main;
  if (s == "text_encoder") return ParamGroup::text_encoder;
  throw std::invalid_argument("unknown parameter group: " + std::string(s));
}

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  ParamGroup group = ParamGroup::main;
};

/// Ordered registry of a model's parameters. Registration order is the
/// serialization order; names are unique.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  Tensor<T> add(const std::string& name, Tensor<T> tensor, ParamGroup group = ParamGroup::main) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    tensor.set_requires_grad(true);
    index_.emplace(name, params_.size());
    params_.push_back({name, tensor, group});
    return tensor;
  }

  /// Uniform(+-1/sqrt(fan_in)) weight [fan_in x fan_out].
  Tensor<T> add_weight(const std::string& name, std::size_t fan_in, std::size_t fan_out,
                       ParamGroup group = ParamGroup::main) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> values(fan_in * fan_out);
    for (auto& v : values) v = static_cast<T>(dist(rng_));
    return add(name, Tensor<T>({fan_in, fan_out}, std::move(values)), group);
  }

  Tensor<T> add_constant(const std::string& name, Shape shape, T value, ParamGroup group = ParamGroup::main) {
    return add(name, Tensor<T>(std::move(shape), value), group);
  }

  /// Normal(0, std) table, the embedding initializer.
  Tensor<T> add_normal(const std::string& name, Shape shape, double stddev, ParamGroup group = ParamGroup::main) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<T>(dist(rng_));
    return add(name, Tensor<T>(std::move(shape), std::move(values)), group);
  }

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.tensor.numel();
    return total;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
};

/// Affine layer parameters, y = x W + b.
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
         ParamGroup group = ParamGroup::main)
      : weight(store.add_weight(name + ".weight", in, out, group)),
        bias(store.add_constant(name + ".bias", {out}, T(0), group)) {}

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain;
  Tensor<T> bias;

  LayerNormParams() = default;
  LayerNormParams(ParameterStore<T>& store, const std::string& name, std::size_t width,
                  ParamGroup group = ParamGroup::main)
      : gain(store.add_constant(name + ".gain", {width}, T(1), group)),
        bias(store.add_constant(name + ".bias", {width}, T(0), group)) {}
};

}  // namespace orthtd
