// Multi-head self-attention and the post-norm Transformer encoder block.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "orthtd/numerics/ops.hpp"
#include "orthtd/numerics/parameter.hpp"

namespace orthtd {

/// Scaled dot-product attention over sequences packed as [B*T x d] with
/// row b*T + t. Heads split d into contiguous blocks of d / heads. Keys with
/// key_valid[b*T + t] == 0 receive zero weight; every sequence needs at least
/// one valid key. If probabilities is non-null it receives the [B x heads x T x T]
/// attention weights.
template <typename T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                       std::size_t seq_len, std::size_t heads,
                                       std::span<const std::uint8_t> key_valid = {},
                                       std::vector<T>* probabilities = nullptr) {
  detail::require_same_shape(q, k, "attention");
  detail::require_same_shape(q, v, "attention");
  const std::size_t d = q.cols();
  detail::require(heads > 0 && d % heads == 0,
                  "attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  detail::require(seq_len > 0 && q.rows() % seq_len == 0, "attention: rows not a multiple of sequence length");
  const std::size_t batch = q.rows() / seq_len, dh = d / heads;
  detail::require(key_valid.empty() || key_valid.size() == batch * seq_len, "attention: key mask size mismatch");
  const T scale = T(1) / std::sqrt(T(dh));
  std::vector<std::uint8_t> valid(key_valid.begin(), key_valid.end());
  if (valid.empty()) valid.assign(batch * seq_len, 1);

  std::vector<T> probs(batch * heads * seq_len * seq_len, T(0));
  std::vector<T> out(q.numel(), T(0));
  const T* qd = q.data().data();
  const T* kd = k.data().data();
  const T* vd = v.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    bool any = false;
    for (std::size_t j = 0; j < seq_len; ++j) any = any || valid[b * seq_len + j];
    detail::require(any, "attention: sequence " + std::to_string(b) + " has no valid key");
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq_len; ++i) {
        T* p = probs.data() + ((b * heads + h) * seq_len + i) * seq_len;
        const T* qi = qd + (b * seq_len + i) * d + h * dh;
        T top = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < seq_len; ++j) {
          if (!valid[b * seq_len + j]) continue;
          const T* kj = kd + (b * seq_len + j) * d + h * dh;
          T s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          p[j] = s * scale;
          top = std::max(top, p[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < seq_len; ++j) {
          p[j] = valid[b * seq_len + j] ? std::exp(p[j] - top) : T(0);
          total += p[j];
        }
        T* oi = out.data() + (b * seq_len + i) * d + h * dh;
        for (std::size_t j = 0; j < seq_len; ++j) {
          p[j] /= total;
          if (p[j] == T(0)) continue;
          const T* vj = vd + (b * seq_len + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }
  if (probabilities) *probabilities = probs;

  return Tensor<T>::make_result(
      q.shape(), std::move(out), {q, k, v},
      [batch, seq_len, heads, d, dh, scale, probs = std::move(probs)](TensorNode<T>& self) {
        const T* qd = parent_data(self, 0);
        const T* kd = parent_data(self, 1);
        const T* vd = parent_data(self, 2);
        T* gq = parent_grad(self, 0);
        T* gk = parent_grad(self, 1);
        T* gv = parent_grad(self, 2);
        std::vector<T> dp(seq_len);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < seq_len; ++i) {
              const T* p = probs.data() + ((b * heads + h) * seq_len + i) * seq_len;
              const T* doi = self.grad.data() + (b * seq_len + i) * d + h * dh;
              T dot = 0;
              for (std::size_t j = 0; j < seq_len; ++j) {
                dp[j] = 0;
                if (p[j] == T(0)) continue;
                const T* vj = vd + (b * seq_len + j) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) dp[j] += doi[c] * vj[c];
                dot += p[j] * dp[j];
                if (gv) {
                  T* gvj = gv + (b * seq_len + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += p[j] * doi[c];
                }
              }
              const T* qi = qd + (b * seq_len + i) * d + h * dh;
              for (std::size_t j = 0; j < seq_len; ++j) {
                if (p[j] == T(0)) continue;
                const T ds = p[j] * (dp[j] - dot) * scale;
                const T* kj = kd + (b * seq_len + j) * d + h * dh;
                if (gq) {
                  T* gqi = gq + (b * seq_len + i) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                }
                if (gk) {
                  T* gkj = gk + (b * seq_len + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
      });
}

template <typename T>
struct MultiHeadSelfAttention {
  Linear<T> query, key, value, output;
  std::size_t heads = 1;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParameterStore<T>& store, const std::string& name, std::size_t width,
                         std::size_t num_heads, ParamGroup group = ParamGroup::main)
      : query(store, name + ".query", width, width, group),
        key(store, name + ".key", width, width, group),
        value(store, name + ".value", width, width, group),
        output(store, name + ".output", width, width, group),
        heads(num_heads) {
    if (num_heads == 0 || width % num_heads != 0)
      throw ShapeError("attention width " + std::to_string(width) + " not divisible by " +
                       std::to_string(num_heads) + " heads");
  }

  Tensor<T> forward(const Tensor<T>& x, std::size_t seq_len, std::span<const std::uint8_t> key_valid = {},
                    std::vector<T>* probabilities = nullptr) const {
    auto attended = scaled_dot_product_attention(affine(x, query.weight, query.bias), affine(x, key.weight, key.bias),
                                                 affine(x, value.weight, value.bias), seq_len, heads, key_valid,
                                                 probabilities);
    return affine(attended, output.weight, output.bias);
  }
};

/// Post-norm encoder block: x = LN(x + MHSA(x)); x = LN(x + FF(x)), FF of width 4d with GELU.
template <typename T>
struct EncoderBlock {
  MultiHeadSelfAttention<T> attention;
  LayerNormParams<T> attention_norm;
  Linear<T> ff_in, ff_out;
  LayerNormParams<T> ff_norm;

  EncoderBlock() = default;
  EncoderBlock(ParameterStore<T>& store, const std::string& name, std::size_t width, std::size_t heads,
               ParamGroup group = ParamGroup::main)
      : attention(store, name + ".attn", width, heads, group),
        attention_norm(store, name + ".attn_norm", width, group),
        ff_in(store, name + ".ff_in", width, 4 * width, group),
        ff_out(store, name + ".ff_out", 4 * width, width, group),
        ff_norm(store, name + ".ff_norm", width, group) {}

  Tensor<T> forward(const Tensor<T>& x, std::size_t seq_len, std::span<const std::uint8_t> key_valid = {},
                    T dropout_rate = T(0), std::mt19937_64* rng = nullptr) const {
    auto attended = attention.forward(x, seq_len, key_valid);
    if (rng) attended = dropout(attended, dropout_rate, *rng);
    auto h = layer_norm(add(x, attended), attention_norm.gain, attention_norm.bias);
    auto ff = affine(gelu(affine(h, ff_in.weight, ff_in.bias)), ff_out.weight, ff_out.bias);
    if (rng) ff = dropout(ff, dropout_rate, *rng);
    return layer_norm(add(h, ff), ff_norm.gain, ff_norm.bias);
  }
};

}  // namespace orthtd
