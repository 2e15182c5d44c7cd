// Task decomposition of H_global into shared and task-specific subspaces,
// the orthogonality penalty between them, and per-task prediction heads.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "orthtd/numerics/ops.hpp"
#include "orthtd/numerics/parameter.hpp"

namespace orthtd {

struct DecompConfig {
  double shared_ratio = 0.5;
  std::size_t task_dim = 0;     // 0: D_hidden
  std::size_t head_hidden = 0;  // 0: task_dim / 2
  bool orthogonality = true;
  // Cosine of whole flattened batch matrices instead of per-record rows.
  bool flattened_cosine = false;

  bool operator==(const DecompConfig&) const = default;
};

/// Resolved subspace sizes.
struct DecompDims {
  std::size_t task_dim = 0;
  std::size_t shared = 0;
  std::size_t specific = 0;
  std::size_t head_hidden = 0;

  static DecompDims resolve(const DecompConfig& cfg, std::size_t d_hidden) {
    if (!(cfg.shared_ratio > 0.0 && cfg.shared_ratio < 1.0))
      throw std::invalid_argument("decomp: shared_ratio must lie in (0, 1)");
    DecompDims d;
    d.task_dim = cfg.task_dim ? cfg.task_dim : d_hidden;
    d.shared = static_cast<std::size_t>(std::llround(cfg.shared_ratio * static_cast<double>(d.task_dim)));
    d.specific = d.task_dim >= d.shared ? d.task_dim - d.shared : 0;
    d.head_hidden = cfg.head_hidden ? cfg.head_hidden : std::max<std::size_t>(1, d.task_dim / 2);
    if (d.shared < 2 || d.specific < 2)
      throw std::invalid_argument("decomp: shared (" + std::to_string(d.shared) + ") and specific (" +
                                  std::to_string(d.specific) + ") widths must each be at least 2");
    if (cfg.orthogonality && d.shared != d.specific)
      throw std::invalid_argument("decomp: orthogonality needs equal shared and specific widths, got " +
                                  std::to_string(d.shared) + " and " + std::to_string(d.specific));
    return d;
  }
};

/// layer_norm(gelu(x W + b)), the form of both subspace projections.
template <typename T>
struct SubspaceProjection {
  Linear<T> linear;
  LayerNormParams<T> norm;

  SubspaceProjection() = default;
  SubspaceProjection(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out)
      : linear(store, name, in, out), norm(store, name + ".norm", out) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    return layer_norm(gelu(affine(x, linear.weight, linear.bias)), norm.gain, norm.bias);
  }
};

/// Two-layer MLP with GELU, producing probabilities via sigmoid.
template <typename T>
struct PredictionHead {
  Linear<T> hidden;
  Linear<T> output;

  PredictionHead() = default;
  PredictionHead(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t width)
      : hidden(store, name + ".hidden", in, width), output(store, name + ".out", width, 1) {}

  Tensor<T> logits(const Tensor<T>& x) const {
    return reshape(affine(gelu(affine(x, hidden.weight, hidden.bias)), output.weight, output.bias), {x.rows()});
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return sigmoid(logits(x)); }
};

/// (1/K) sum_k mean_i |cos(F_shared_i, F_specific^(k)_i)|.
template <typename T>
Tensor<T> ortho_loss(const Tensor<T>& shared, const std::vector<Tensor<T>>& specific, bool flattened = false) {
  if (specific.empty()) throw std::invalid_argument("ortho_loss: no task-specific features");
  std::vector<Tensor<T>> terms;
  for (const auto& f : specific) {
    if (f.shape() != shared.shape())
      throw ShapeError("ortho_loss: specific features " + shape_str(f.shape()) + " vs shared " + shape_str(shared.shape()));
    if (flattened)
      terms.push_back(abs(row_cosine(reshape(shared, {1, shared.numel()}), reshape(f, {1, f.numel()}))));
    else
      terms.push_back(mean_all(abs(row_cosine(shared, f))));
  }
  return scale(add_scalars(terms), T(1) / T(specific.size()));
}

template <typename T>
class TaskDecomposition {
 public:
  TaskDecomposition() = default;
  TaskDecomposition(ParameterStore<T>& store, const std::string& prefix, const DecompConfig& config,
                    std::size_t d_hidden, std::size_t tasks)
      : config_(config), dims_(DecompDims::resolve(config, d_hidden)) {
    if (tasks == 0) throw std::invalid_argument("decomp: at least one task is required");
    shared_ = SubspaceProjection<T>(store, prefix + ".shared", d_hidden, dims_.shared);
    for (std::size_t k = 0; k < tasks; ++k)
      specific_.emplace_back(store, prefix + ".specific" + std::to_string(k), d_hidden, dims_.specific);
    for (std::size_t k = 0; k < tasks; ++k)
      heads_.emplace_back(store, prefix + ".head" + std::to_string(k), dims_.shared + dims_.specific, dims_.head_hidden);
  }

  std::size_t tasks() const { return specific_.size(); }
  const DecompDims& dims() const { return dims_; }
  const DecompConfig& config() const { return config_; }

  Tensor<T> project_shared(const Tensor<T>& h_global) const { return shared_(h_global); }

  Tensor<T> project_specific(const Tensor<T>& h_global, std::size_t task) const {
    if (task >= specific_.size())
      throw std::out_of_range("project_specific: task " + std::to_string(task) + " outside [0, " +
                              std::to_string(specific_.size()) + ")");
    return specific_[task](h_global);
  }

  /// Probability for task k from concat(F_shared, F_specific^(k)), shared first.
  Tensor<T> predict_task(const Tensor<T>& shared, const Tensor<T>& specific, std::size_t task) const {
    return heads_.at(task)(concat_cols(std::vector<Tensor<T>>{shared, specific}));
  }

  SubspaceProjection<T>& shared_projection() { return shared_; }
  SubspaceProjection<T>& specific_projection(std::size_t k) { return specific_.at(k); }
  PredictionHead<T>& head(std::size_t k) { return heads_.at(k); }

 private:
  DecompConfig config_;
  DecompDims dims_;
  SubspaceProjection<T> shared_;
  std::vector<SubspaceProjection<T>> specific_;
  std::vector<PredictionHead<T>> heads_;
};

}  // namespace orthtd
