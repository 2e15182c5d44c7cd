// Multi-task strategies over the shared encoder + fusion backbone: the
// decomposition model and the comparison baselines, behind one interface.
#pragma once

#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "orthtd/model/batch.hpp"
#include "orthtd/model/decomposition.hpp"
#include "orthtd/model/fusion.hpp"
#include "orthtd/model/losses.hpp"

namespace orthtd {

enum class Strategy { orthtd, single_task, hard_sharing, uncertainty, cross_stitch, mmoe };

inline constexpr Strategy kAllStrategies[] = {Strategy::orthtd,      Strategy::single_task,  Strategy::hard_sharing,
                                              Strategy::uncertainty, Strategy::cross_stitch, Strategy::mmoe};

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::orthtd: return "orthtd";
    case Strategy::single_task: return "single_task";
    case Strategy::hard_sharing: return "hard_sharing";
    case Strategy::uncertainty: return "uncertainty";
    case Strategy::cross_stitch: return "cross_stitch";
    case Strategy::mmoe: return "mmoe";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& name) {
  for (auto s : kAllStrategies)
    if (name == to_string(s)) return s;
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

struct StrategyConfig {
  Strategy kind = Strategy::orthtd;
  std::size_t experts = 4;
  double stitch_diagonal = 0.9;
  // Single-task branches use hard-sharing heads on H_global instead of the decomposition head.
  bool single_task_plain_head = false;

  bool operator==(const StrategyConfig&) const = default;
};

/// Everything needed to construct a model; parameters are initialized from `seed`.
struct ModelSpec {
  FeatureSchema schema;
  TabularEncoderConfig tabular;
  TextEncoderConfig text;
  FusionConfig fusion;
  DecompConfig decomp;
  StrategyConfig strategy;
  std::uint64_t seed = 1;

  bool operator==(const ModelSpec&) const = default;
};

template <typename T>
struct ModelOutput {
  std::vector<Tensor<T>> probabilities;  // K tensors of shape [B]
  std::optional<Tensor<T>> ortho;        // L_ortho when the strategy decomposes
  std::vector<Tensor<T>> gates;          // MMoE gate distributions, [B x E] per task
  std::vector<Tensor<T>> branch_ortho;   // single-task: each branch's own L_ortho
};

namespace detail {

inline std::vector<std::uint8_t> task_column(const std::vector<std::uint8_t>& table, std::size_t rows,
                                             std::size_t tasks, std::size_t k) {
  std::vector<std::uint8_t> col(rows);
  for (std::size_t r = 0; r < rows; ++r) col[r] = table[r * tasks + k];
  return col;
}

}  // namespace detail

/// Per-task asymmetric losses over labeled records; tasks with no labels in the batch yield nullopt.
template <typename T>
std::vector<std::optional<Tensor<T>>> task_losses(const std::vector<Tensor<T>>& probabilities, const Batch& batch,
                                                  const LossConfig& cfg) {
  std::vector<std::optional<Tensor<T>>> out;
  for (std::size_t k = 0; k < probabilities.size(); ++k) {
    const auto labels = detail::task_column(batch.labels, batch.size, batch.n_tasks, k);
    const auto present = detail::task_column(batch.present, batch.size, batch.n_tasks, k);
    if (std::none_of(present.begin(), present.end(), [](auto v) { return v != 0; })) {
      out.emplace_back(std::nullopt);
      continue;
    }
    out.emplace_back(asymmetric_loss(probabilities[k], labels, cfg, present));
  }
  return out;
}

template <typename T>
class MultiTaskModel {
 public:
  explicit MultiTaskModel(ModelSpec spec) : spec_(std::move(spec)), store_(spec_.seed) {}
  virtual ~MultiTaskModel() = default;
  MultiTaskModel(const MultiTaskModel&) = delete;
  MultiTaskModel& operator=(const MultiTaskModel&) = delete;

  /// Forward pass; a non-null rng enables dropout (training mode).
  virtual ModelOutput<T> forward(const Batch& batch, std::mt19937_64* rng = nullptr) const = 0;

  /// Training objective for one batch.
  virtual Tensor<T> objective(const ModelOutput<T>& out, const Batch& batch, const LossConfig& cfg) const {
    std::vector<Tensor<T>> losses;
    for (auto& l : task_losses(out.probabilities, batch, cfg))
      if (l) losses.push_back(*l);
    if (losses.empty()) return Tensor<T>::scalar(T(0));
    return combined_loss(losses, out.ortho, cfg.lambda_ortho);
  }

  Strategy strategy() const { return spec_.strategy.kind; }
  const ModelSpec& spec() const { return spec_; }
  std::size_t tasks() const { return spec_.schema.task_count(); }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }

 protected:
  ModelSpec spec_;
  ParameterStore<T> store_;
};

/// Output_j = sum_i alpha[j, i] * feature_i.
template <typename T>
std::vector<Tensor<T>> cross_stitch_mix(const std::vector<Tensor<T>>& features, const Tensor<T>& alpha) {
  const std::size_t k = features.size();
  if (alpha.rank() != 2 || alpha.dim(0) != k || alpha.dim(1) != k)
    throw ShapeError("cross_stitch_mix: alpha " + shape_str(alpha.shape()) + " for " + std::to_string(k) + " branches");
  for (const auto& f : features)
    if (f.shape() != features.front().shape()) throw ShapeError("cross_stitch_mix: branch shapes differ");
  std::vector<Tensor<T>> out;
  for (std::size_t j = 0; j < k; ++j) {
    Tensor<T> mixed = scale_by(features[0], element(alpha, j * k));
    for (std::size_t i = 1; i < k; ++i) mixed = add(mixed, scale_by(features[i], element(alpha, j * k + i)));
    out.push_back(mixed);
  }
  return out;
}

template <typename T>
struct MixtureOfExperts {
  std::vector<Linear<T>> experts;
  std::vector<Linear<T>> gates;

  MixtureOfExperts() = default;
  MixtureOfExperts(ParameterStore<T>& store, const std::string& prefix, std::size_t in, std::size_t width,
                   std::size_t num_experts, std::size_t tasks) {
    if (num_experts < 2) throw std::invalid_argument("mmoe: at least two experts are required");
    for (std::size_t e = 0; e < num_experts; ++e) experts.emplace_back(store, prefix + ".expert" + std::to_string(e), in, width);
    for (std::size_t k = 0; k < tasks; ++k) gates.emplace_back(store, prefix + ".gate" + std::to_string(k), in, num_experts);
  }

  /// Per-task mixtures sum_e g_k[e] * gelu(expert_e(H)); gate distributions go to `gate_out`.
  std::vector<Tensor<T>> forward(const Tensor<T>& h, std::vector<Tensor<T>>* gate_out = nullptr) const {
    std::vector<Tensor<T>> expert_out;
    for (const auto& e : experts) expert_out.push_back(gelu(affine(h, e.weight, e.bias)));
    std::vector<Tensor<T>> features;
    for (const auto& g : gates) {
      auto weights = softmax_rows(affine(h, g.weight, g.bias));
      if (gate_out) gate_out->push_back(weights);
      Tensor<T> mixed = scale_rows(expert_out[0], column(weights, 0));
      for (std::size_t e = 1; e < expert_out.size(); ++e) mixed = add(mixed, scale_rows(expert_out[e], column(weights, e)));
      features.push_back(mixed);
    }
    return features;
  }
};

template <typename T>
class OrthTDModel : public MultiTaskModel<T> {
 public:
  explicit OrthTDModel(ModelSpec spec) : MultiTaskModel<T>(std::move(spec)) {
    const auto& s = this->spec_;
    backbone_ = Backbone<T>(this->store_, "backbone", s.schema, s.tabular, s.text, s.fusion);
    decomp_ = TaskDecomposition<T>(this->store_, "decomp", s.decomp, s.fusion.d_hidden, s.schema.task_count());
  }

  ModelOutput<T> forward(const Batch& batch, std::mt19937_64* rng = nullptr) const override {
    auto h = backbone_.forward(batch, rng);
    ModelOutput<T> out;
    auto shared = decomp_.project_shared(h);
    std::vector<Tensor<T>> specific;
    for (std::size_t k = 0; k < decomp_.tasks(); ++k) {
      specific.push_back(decomp_.project_specific(h, k));
      out.probabilities.push_back(decomp_.predict_task(shared, specific.back(), k));
    }
    if (decomp_.config().orthogonality) out.ortho = ortho_loss(shared, specific, decomp_.config().flattened_cosine);
    return out;
  }

  Backbone<T>& backbone() { return backbone_; }
  TaskDecomposition<T>& decomposition() { return decomp_; }

 private:
  Backbone<T> backbone_;
  TaskDecomposition<T> decomp_;
};

/// Separate heads read H_global directly.
template <typename T>
class HardSharingModel : public MultiTaskModel<T> {
 public:
  explicit HardSharingModel(ModelSpec spec) : MultiTaskModel<T>(std::move(spec)) {
    const auto& s = this->spec_;
    backbone_ = Backbone<T>(this->store_, "backbone", s.schema, s.tabular, s.text, s.fusion);
    const auto dims = DecompDims::resolve(s.decomp, s.fusion.d_hidden);
    for (std::size_t k = 0; k < s.schema.task_count(); ++k)
      heads_.emplace_back(this->store_, "heads.head" + std::to_string(k), s.fusion.d_hidden, dims.head_hidden);
  }

  ModelOutput<T> forward(const Batch& batch, std::mt19937_64* rng = nullptr) const override {
    return hard_sharing_forward(backbone_.forward(batch, rng));
  }

  ModelOutput<T> hard_sharing_forward(const Tensor<T>& h) const {
    ModelOutput<T> out;
    for (const auto& head : heads_) out.probabilities.push_back(head(h));
    return out;
  }

  Backbone<T>& backbone() { return backbone_; }
  PredictionHead<T>& head(std::size_t k) { return heads_.at(k); }

 private:
  Backbone<T> backbone_;
  std::vector<PredictionHead<T>> heads_;
};

/// Hard sharing trained with learned per-task log-variance weights.
template <typename T>
class UncertaintyModel : public HardSharingModel<T> {
 public:
  explicit UncertaintyModel(ModelSpec spec) : HardSharingModel<T>(std::move(spec)) {
    log_vars_ = this->store_.add_constant("uncertainty.log_var", {this->spec_.schema.task_count()}, T(0));
  }

  Tensor<T> objective(const ModelOutput<T>& out, const Batch& batch, const LossConfig& cfg) const override {
    std::vector<Tensor<T>> terms;
    const auto losses = task_losses(out.probabilities, batch, cfg);
    for (std::size_t k = 0; k < losses.size(); ++k) {
      if (!losses[k]) continue;
      auto s = element(log_vars_, k);
      terms.push_back(add(mul(exp(scale(s, T(-1))), *losses[k]), s));
    }
    if (terms.empty()) return Tensor<T>::scalar(T(0));
    return add_scalars(terms);
  }

  const Tensor<T>& log_variances() const { return log_vars_; }

 private:
  Tensor<T> log_vars_;
};

template <typename T>
class CrossStitchModel : public MultiTaskModel<T> {
 public:
  explicit CrossStitchModel(ModelSpec spec) : MultiTaskModel<T>(std::move(spec)) {
    const auto& s = this->spec_;
    const std::size_t k = s.schema.task_count();
    backbone_ = Backbone<T>(this->store_, "backbone", s.schema, s.tabular, s.text, s.fusion);
    const auto dims = DecompDims::resolve(s.decomp, s.fusion.d_hidden);
    for (std::size_t t = 0; t < k; ++t)
      branches_.emplace_back(this->store_, "stitch.branch" + std::to_string(t), s.fusion.d_hidden, dims.task_dim);
    std::vector<T> init(k * k);
    const double diag = k == 1 ? 1.0 : s.strategy.stitch_diagonal;
    const double off = k == 1 ? 0.0 : (1.0 - s.strategy.stitch_diagonal) / static_cast<double>(k - 1);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t i = 0; i < k; ++i) init[j * k + i] = static_cast<T>(i == j ? diag : off);
    alpha_ = this->store_.add("stitch.alpha", Tensor<T>({k, k}, std::move(init)));
    for (std::size_t t = 0; t < k; ++t)
      heads_.emplace_back(this->store_, "heads.head" + std::to_string(t), dims.task_dim, dims.head_hidden);
  }

  ModelOutput<T> forward(const Batch& batch, std::mt19937_64* rng = nullptr) const override {
    auto h = backbone_.forward(batch, rng);
    std::vector<Tensor<T>> features;
    for (const auto& b : branches_) features.push_back(b(h));
    auto mixed = cross_stitch_mix(features, alpha_);
    ModelOutput<T> out;
    for (std::size_t t = 0; t < heads_.size(); ++t) out.probabilities.push_back(heads_[t](mixed[t]));
    return out;
  }

  Tensor<T>& alpha() { return alpha_; }
  SubspaceProjection<T>& branch(std::size_t k) { return branches_.at(k); }
  PredictionHead<T>& head(std::size_t k) { return heads_.at(k); }
  Backbone<T>& backbone() { return backbone_; }

 private:
  Backbone<T> backbone_;
  std::vector<SubspaceProjection<T>> branches_;
  Tensor<T> alpha_;
  std::vector<PredictionHead<T>> heads_;
};

template <typename T>
class MMoEModel : public MultiTaskModel<T> {
 public:
  explicit MMoEModel(ModelSpec spec) : MultiTaskModel<T>(std::move(spec)) {
    const auto& s = this->spec_;
    backbone_ = Backbone<T>(this->store_, "backbone", s.schema, s.tabular, s.text, s.fusion);
    const auto dims = DecompDims::resolve(s.decomp, s.fusion.d_hidden);
    moe_ = MixtureOfExperts<T>(this->store_, "mmoe", s.fusion.d_hidden, dims.task_dim, s.strategy.experts,
                               s.schema.task_count());
    for (std::size_t t = 0; t < s.schema.task_count(); ++t)
      heads_.emplace_back(this->store_, "heads.head" + std::to_string(t), dims.task_dim, dims.head_hidden);
  }

  ModelOutput<T> forward(const Batch& batch, std::mt19937_64* rng = nullptr) const override {
    ModelOutput<T> out;
    auto features = moe_.forward(backbone_.forward(batch, rng), &out.gates);
    for (std::size_t t = 0; t < heads_.size(); ++t) out.probabilities.push_back(heads_[t](features[t]));
    return out;
  }

  MixtureOfExperts<T>& mixture() { return moe_; }

 private:
  Backbone<T> backbone_;
  MixtureOfExperts<T> moe_;
  std::vector<PredictionHead<T>> heads_;
};

/// K independent pipelines, one task each, with no shared parameters.
template <typename T>
class SingleTaskModel : public MultiTaskModel<T> {
 public:
  explicit SingleTaskModel(ModelSpec spec) : MultiTaskModel<T>(std::move(spec)) {
    const auto& s = this->spec_;
    const auto dims = DecompDims::resolve(s.decomp, s.fusion.d_hidden);
    for (std::size_t k = 0; k < s.schema.task_count(); ++k) {
      const std::string prefix = "branch" + std::to_string(k);
      Branch b;
      b.backbone = Backbone<T>(this->store_, prefix + ".backbone", s.schema, s.tabular, s.text, s.fusion);
      if (s.strategy.single_task_plain_head)
        b.head = PredictionHead<T>(this->store_, prefix + ".heads.head0", s.fusion.d_hidden, dims.head_hidden);
      else
        b.decomp = TaskDecomposition<T>(this->store_, prefix + ".decomp", s.decomp, s.fusion.d_hidden, 1);
      branches_.push_back(std::move(b));
    }
  }

  ModelOutput<T> forward(const Batch& batch, std::mt19937_64* rng = nullptr) const override {
    ModelOutput<T> out;
    std::vector<Tensor<T>> orthos;
    for (const auto& b : branches_) {
      auto h = b.backbone.forward(batch, rng);
      if (this->spec_.strategy.single_task_plain_head) {
        out.probabilities.push_back(b.head(h));
        continue;
      }
      auto shared = b.decomp.project_shared(h);
      auto specific = b.decomp.project_specific(h, 0);
      out.probabilities.push_back(b.decomp.predict_task(shared, specific, 0));
      if (b.decomp.config().orthogonality) orthos.push_back(ortho_loss(shared, {specific}, b.decomp.config().flattened_cosine));
    }
    if (!orthos.empty()) {
      out.branch_ortho = orthos;
      out.ortho = scale(add_scalars(orthos), T(1) / T(orthos.size()));
    }
    return out;
  }

  /// Sum of each branch's own objective, so branches train as separate models.
  Tensor<T> objective(const ModelOutput<T>& out, const Batch& batch, const LossConfig& cfg) const override {
    std::vector<Tensor<T>> terms;
    const auto losses = task_losses(out.probabilities, batch, cfg);
    for (std::size_t k = 0; k < losses.size(); ++k) {
      if (!losses[k]) continue;
      std::optional<Tensor<T>> ortho;
      if (k < out.branch_ortho.size()) ortho = out.branch_ortho[k];
      terms.push_back(combined_loss(std::vector<Tensor<T>>{*losses[k]}, ortho, cfg.lambda_ortho));
    }
    if (terms.empty()) return Tensor<T>::scalar(T(0));
    return add_scalars(terms);
  }

  Backbone<T>& backbone(std::size_t k) { return branches_.at(k).backbone; }

 private:
  struct Branch {
    Backbone<T> backbone;
    TaskDecomposition<T> decomp;
    PredictionHead<T> head;
  };
  std::vector<Branch> branches_;
};

template <typename T>
std::unique_ptr<MultiTaskModel<T>> build_strategy(const ModelSpec& spec) {
  spec.schema.validate();
  switch (spec.strategy.kind) {
    case Strategy::orthtd: return std::make_unique<OrthTDModel<T>>(spec);
    case Strategy::single_task: return std::make_unique<SingleTaskModel<T>>(spec);
    case Strategy::hard_sharing: return std::make_unique<HardSharingModel<T>>(spec);
    case Strategy::uncertainty: return std::make_unique<UncertaintyModel<T>>(spec);
    case Strategy::cross_stitch: return std::make_unique<CrossStitchModel<T>>(spec);
    case Strategy::mmoe: return std::make_unique<MMoEModel<T>>(spec);
  }
  throw std::invalid_argument("build_strategy: unknown strategy");
}

}  // namespace orthtd
