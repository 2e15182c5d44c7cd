// Modality encoders: each maps a batch to one [B x D_hidden] token.
#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "orthtd/data/cohort.hpp"
#include "orthtd/model/batch.hpp"
#include "orthtd/numerics/attention.hpp"

namespace orthtd {

inline constexpr double kEmbeddingInitStd = 0.02;

struct TabularEncoderConfig {
  std::size_t embedding_dim = 16;
  bool operator==(const TabularEncoderConfig&) const = default;
};

struct TextEncoderConfig {
  std::size_t embedding_dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  bool shared_weights = true;
  bool operator==(const TextEncoderConfig&) const = default;
};

/// Categorical embeddings ++ continuous values ++ missing masks, projected to D_hidden.
template <typename T>
class TabularEncoder {
 public:
  TabularEncoder() = default;
  TabularEncoder(ParameterStore<T>& store, const std::string& prefix, const FeatureSchema& schema,
                 const TabularEncoderConfig& config, std::size_t d_hidden) {
    std::size_t width = 2 * schema.continuous.size();
    for (const auto& c : schema.categorical) {
      embeddings_.push_back(store.add_normal(prefix + ".embed." + c.name,
                                             {static_cast<std::size_t>(c.cardinality), config.embedding_dim},
                                             kEmbeddingInitStd));
      width += config.embedding_dim;
    }
    if (width == 0) throw std::invalid_argument("tabular encoder: schema has no categorical or continuous features");
    projection_ = Linear<T>(store, prefix + ".proj", width, d_hidden);
  }

  Tensor<T> encode(const Batch& batch) const {
    const std::size_t rows = batch.size;
    std::vector<Tensor<T>> parts;
    std::vector<int> ids(rows);
    for (std::size_t c = 0; c < embeddings_.size(); ++c) {
      for (std::size_t r = 0; r < rows; ++r) ids[r] = batch.categorical[r * batch.n_categorical + c];
      parts.push_back(embedding(embeddings_[c], std::span<const int>(ids)));
    }
    if (batch.n_continuous > 0) {
      parts.emplace_back(Shape{rows, batch.n_continuous},
                         std::vector<T>(batch.continuous.begin(), batch.continuous.end()));
      parts.emplace_back(Shape{rows, batch.n_continuous}, std::vector<T>(batch.missing.begin(), batch.missing.end()));
    }
    auto features = parts.size() == 1 ? parts.front() : concat_cols(parts);
    return affine(features, projection_.weight, projection_.bias);
  }

  const Linear<T>& projection() const { return projection_; }

 private:
  std::vector<Tensor<T>> embeddings_;
  Linear<T> projection_;
};

/// Small Transformer over [CLS] + tokens; the CLS output is projected to
/// D_hidden. Transformer weights sit in the text_encoder group, the output
/// projection in the main group.
template <typename T>
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(ParameterStore<T>& store, const std::string& prefix, int vocab_size, std::size_t max_len,
              const TextEncoderConfig& config, std::size_t d_hidden)
      : vocab_size_(vocab_size) {
    constexpr auto group = ParamGroup::text_encoder;
    token_embedding_ = store.add_normal(prefix + ".token_embed",
                                        {static_cast<std::size_t>(vocab_size), config.embedding_dim},
                                        kEmbeddingInitStd, group);
    position_embedding_ = store.add_normal(prefix + ".pos_embed", {max_len, config.embedding_dim}, kEmbeddingInitStd, group);
    for (std::size_t l = 0; l < config.layers; ++l)
      blocks_.emplace_back(store, prefix + ".block" + std::to_string(l), config.embedding_dim, config.heads, group);
    projection_ = Linear<T>(store, prefix + ".proj", config.embedding_dim, d_hidden);
  }

  /// tokens / valid are [rows x seq_len]; position 0 must be the CLS token.
  Tensor<T> encode(std::span<const int> tokens, std::span<const std::uint8_t> valid, std::size_t rows,
                   std::size_t seq_len, T dropout_rate = T(0), std::mt19937_64* rng = nullptr) const {
    if (seq_len > position_embedding_.dim(0))
      throw ShapeError("text encoder: sequence length " + std::to_string(seq_len) + " exceeds " +
                       std::to_string(position_embedding_.dim(0)) + " positions");
    for (int tok : tokens)
      if (tok < 0 || tok >= vocab_size_)
        throw std::out_of_range("text encoder: token id " + std::to_string(tok) + " outside vocabulary of " +
                                std::to_string(vocab_size_));
    std::vector<int> positions(rows * seq_len);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % seq_len);
    auto x = add(embedding(token_embedding_, tokens), embedding(position_embedding_, std::span<const int>(positions)));
    for (const auto& block : blocks_) x = block.forward(x, seq_len, valid, dropout_rate, rng);
    auto cls = take_slot(x, seq_len, 0);
    return affine(cls, projection_.weight, projection_.bias);
  }

 private:
  int vocab_size_ = 0;
  Tensor<T> token_embedding_;
  Tensor<T> position_embedding_;
  std::vector<EncoderBlock<T>> blocks_;
  Linear<T> projection_;
};

/// Per-field text tokens, sharing one encoder across fields when configured.
template <typename T>
class TextModality {
 public:
  TextModality() = default;
  TextModality(ParameterStore<T>& store, const std::string& prefix, const FeatureSchema& schema,
               const TextEncoderConfig& config, std::size_t d_hidden)
      : shared_(config.shared_weights) {
    if (schema.text.empty()) return;
    if (shared_) {
      std::size_t max_len = 0;
      for (const auto& f : schema.text) max_len = std::max(max_len, f.max_tokens + 1);
      encoders_.emplace_back(store, prefix, schema.vocab_size, max_len, config, d_hidden);
    } else {
      for (const auto& f : schema.text)
        encoders_.emplace_back(store, prefix + "." + f.name, schema.vocab_size, f.max_tokens + 1, config, d_hidden);
    }
    fields_ = schema.text.size();
  }

  std::size_t fields() const { return fields_; }

  const TextEncoder<T>& encoder_for(std::size_t field) const { return encoders_.at(shared_ ? 0 : field); }

  std::vector<Tensor<T>> encode(const Batch& batch, T dropout_rate = T(0), std::mt19937_64* rng = nullptr) const {
    std::vector<Tensor<T>> tokens;
    for (std::size_t f = 0; f < fields_; ++f)
      tokens.push_back(encoder_for(f).encode(batch.text[f], batch.text_valid[f], batch.size, batch.text_len[f],
                                             dropout_rate, rng));
    return tokens;
  }

 private:
  bool shared_ = true;
  std::size_t fields_ = 0;
  std::vector<TextEncoder<T>> encoders_;
};

}  // namespace orthtd
