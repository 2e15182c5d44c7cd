// Transformer fusion of modality tokens around a learnable global token.
#pragma once

#include <random>
#include <string>
#include <vector>

#include "orthtd/data/cohort.hpp"
#include "orthtd/model/encoders.hpp"
#include "orthtd/numerics/attention.hpp"

namespace orthtd {

struct FusionConfig {
  std::size_t d_hidden = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  double dropout = 0.0;
  // Without the global token the fused representation is the mean over modality slots.
  bool use_global_token = true;

  bool operator==(const FusionConfig&) const = default;

  void validate() const {
    if (d_hidden == 0 || layers == 0 || heads == 0) throw std::invalid_argument("fusion: dimensions must be positive");
    if (d_hidden % heads != 0)
      throw std::invalid_argument("fusion: d_hidden " + std::to_string(d_hidden) + " not divisible by " +
                                  std::to_string(heads) + " heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("fusion: dropout must lie in [0, 1)");
  }
};

template <typename T>
class FusionEncoder {
 public:
  FusionEncoder() = default;
  /// `modality_slots` counts the tabular token plus one per text field.
  FusionEncoder(ParameterStore<T>& store, const std::string& prefix, const FusionConfig& config,
                std::size_t modality_slots)
      : config_(config), modality_slots_(modality_slots) {
    config.validate();
    if (config.use_global_token)
      global_token_ = store.add_normal(prefix + ".global_token", {config.d_hidden}, kEmbeddingInitStd);
    slot_embedding_ = store.add_normal(prefix + ".slot_embed", {slot_count(), config.d_hidden}, kEmbeddingInitStd);
    for (std::size_t l = 0; l < config.layers; ++l)
      blocks_.emplace_back(store, prefix + ".block" + std::to_string(l), config.d_hidden, config.heads);
  }

  std::size_t slot_count() const { return modality_slots_ + (config_.use_global_token ? 1 : 0); }
  const FusionConfig& config() const { return config_; }
  std::vector<EncoderBlock<T>>& blocks() { return blocks_; }
  const Tensor<T>& global_token() const { return global_token_; }
  const Tensor<T>& slot_embedding() const { return slot_embedding_; }

  /// tokens: one [B x D_hidden] matrix per modality slot. Returns H_global [B x D_hidden].
  Tensor<T> fuse(const std::vector<Tensor<T>>& tokens, std::mt19937_64* rng = nullptr) const {
    if (tokens.size() != modality_slots_)
      throw ShapeError("fuse: expected " + std::to_string(modality_slots_) + " modality tokens, got " +
                       std::to_string(tokens.size()));
    const std::size_t rows = tokens.front().rows();
    for (const auto& t : tokens)
      if (t.rank() != 2 || t.rows() != rows || t.cols() != config_.d_hidden)
        throw ShapeError("fuse: token of shape " + shape_str(t.shape()) + ", expected [" + std::to_string(rows) + "x" +
                         std::to_string(config_.d_hidden) + "]");
    std::vector<Tensor<T>> slots;
    if (config_.use_global_token) slots.push_back(broadcast_rows(global_token_, rows));
    slots.insert(slots.end(), tokens.begin(), tokens.end());
    auto slot_types = broadcast_rows(reshape(slot_embedding_, {slot_count() * config_.d_hidden}), rows);
    auto seq = add(interleave_rows(slots), reshape(slot_types, {rows * slot_count(), config_.d_hidden}));
    const T rate = static_cast<T>(config_.dropout);
    for (const auto& block : blocks_) seq = block.forward(seq, slot_count(), {}, rate, rng);
    return config_.use_global_token ? take_slot(seq, slot_count(), 0) : mean_slots(seq, slot_count());
  }

 private:
  FusionConfig config_;
  std::size_t modality_slots_ = 0;
  Tensor<T> global_token_;
  Tensor<T> slot_embedding_;
  std::vector<EncoderBlock<T>> blocks_;
};

/// Encoders plus fusion: batch -> H_global.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(ParameterStore<T>& store, const std::string& prefix, const FeatureSchema& schema,
           const TabularEncoderConfig& tabular, const TextEncoderConfig& text, const FusionConfig& fusion)
      : tabular_(store, prefix + ".tabular", schema, tabular, fusion.d_hidden),
        text_(store, prefix + ".text", schema, text, fusion.d_hidden),
        fusion_(store, prefix + ".fusion", fusion, 1 + schema.text.size()) {}

  std::vector<Tensor<T>> modality_tokens(const Batch& batch, std::mt19937_64* rng = nullptr) const {
    std::vector<Tensor<T>> tokens{tabular_.encode(batch)};
    for (auto& t : text_.encode(batch, static_cast<T>(fusion_.config().dropout), rng)) tokens.push_back(std::move(t));
    return tokens;
  }

  Tensor<T> forward(const Batch& batch, std::mt19937_64* rng = nullptr) const {
    return fusion_.fuse(modality_tokens(batch, rng), rng);
  }

  std::size_t d_hidden() const { return fusion_.config().d_hidden; }
  const FusionEncoder<T>& fusion() const { return fusion_; }
  const TextModality<T>& text() const { return text_; }

 private:
  TabularEncoder<T> tabular_;
  TextModality<T> text_;
  FusionEncoder<T> fusion_;
};

}  // namespace orthtd
