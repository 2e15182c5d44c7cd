#include <gtest/gtest.h>

#include "orthtd/numerics/attention.hpp"
#include "orthtd/numerics/grad_check.hpp"
#include "test_util.hpp"

using namespace orthtd;
using orthtd::testing::random_tensor;

TEST(Attention, SingleTokenReturnsValueChain) {
  ParameterStore<double> store(1);
  MultiHeadSelfAttention<double> mhsa(store, "a", 4, 2);
  std::mt19937_64 rng(2);
  auto x = random_tensor({3, 4}, rng);  // three sequences of length 1
  auto y = mhsa.forward(x, 1);
  auto chain = affine(affine(x, mhsa.value.weight, mhsa.value.bias), mhsa.output.weight, mhsa.output.bias);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], chain[i], 1e-14);
}

TEST(Attention, ProbabilityRowsSumToOneAndMaskedKeysGetZero) {
  std::mt19937_64 rng(3);
  const std::size_t b = 2, t = 4, d = 6, h = 3;
  auto q = random_tensor({b * t, d}, rng, -3, 3), k = random_tensor({b * t, d}, rng, -3, 3);
  auto v = random_tensor({b * t, d}, rng);
  std::vector<std::uint8_t> valid{1, 1, 0, 0, 1, 0, 1, 1};
  std::vector<double> probs;
  scaled_dot_product_attention(q, k, v, t, h, valid, &probs);
  ASSERT_EQ(probs.size(), b * h * t * t);
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t hh = 0; hh < h; ++hh)
      for (std::size_t i = 0; i < t; ++i) {
        double total = 0;
        for (std::size_t j = 0; j < t; ++j) {
          const double p = probs[((s * h + hh) * t + i) * t + j];
          if (!valid[s * t + j]) {
            EXPECT_EQ(p, 0.0);
          }
          total += p;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
}

TEST(Attention, HeadsMustDivideWidth) {
  ParameterStore<double> store(1);
  EXPECT_THROW(MultiHeadSelfAttention<double>(store, "a", 6, 4), ShapeError);
  Tensor<double> x({2, 6});
  EXPECT_THROW(scaled_dot_product_attention(x, x, x, 2, 4), std::invalid_argument);
}

TEST(Attention, FullyMaskedSequenceThrows) {
  Tensor<double> x({2, 4}, 0.1);
  std::vector<std::uint8_t> valid{0, 0};
  EXPECT_THROW(scaled_dot_product_attention(x, x, x, 2, 2, valid), std::invalid_argument);
}

TEST(EncoderBlock, GradientMatchesFiniteDifferences) {
  ParameterStore<double> store(4);
  EncoderBlock<double> block(store, "blk", 8, 2);
  std::mt19937_64 rng(5);
  auto x = random_tensor({2 * 3, 8}, rng);
  auto w = random_tensor({2 * 3, 8}, rng);
  std::vector<GradCheckInput> inputs{{"x", x}};
  // Softmax is shift invariant per row, so the key bias has an exactly zero
  // gradient; a relative comparison against rounding noise is meaningless there.
  for (auto& p : store.all())
    if (p.name != "blk.attn.key.bias") inputs.push_back({p.name, p.tensor});
  auto r = finite_diff_check([&] { return sum_all(mul(block.forward(x, 3), w)); }, inputs);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_tensor << "[" << r.worst_index << "]";
  for (auto& p : store.all()) {
    if (p.name != "blk.attn.key.bias") continue;
    for (std::size_t i = 0; i < p.tensor.numel(); ++i) EXPECT_NEAR(p.tensor.grad()[i], 0.0, 1e-10);
  }
}

TEST(EncoderBlock, MaskedGradientMatchesFiniteDifferences) {
  ParameterStore<double> store(6);
  EncoderBlock<double> block(store, "blk", 4, 2);
  std::mt19937_64 rng(7);
  auto x = random_tensor({2 * 3, 4}, rng);
  auto w = random_tensor({2 * 3, 4}, rng);
  std::vector<std::uint8_t> valid{1, 1, 0, 1, 0, 0};
  auto r = finite_diff_check([&] { return sum_all(mul(block.forward(x, 3, valid), w)); }, {{"x", x}});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(EncoderBlock, SequencesDoNotInteract) {
  ParameterStore<double> store(8);
  EncoderBlock<double> block(store, "blk", 4, 2);
  std::mt19937_64 rng(9);
  auto x = random_tensor({2 * 3, 4}, rng);
  auto y1 = block.forward(x, 3);
  auto x2 = x.clone();
  for (std::size_t i = 12; i < 24; ++i) x2[i] += 1.0;  // change sequence 1 only
  auto y2 = block.forward(x2, 3);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(y1[i], y2[i]);
}
