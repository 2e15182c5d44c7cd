#include <gtest/gtest.h>

#include <cmath>

#include "orthtd/numerics/grad_check.hpp"
#include "orthtd/numerics/ops.hpp"
#include "test_util.hpp"

using namespace orthtd;
using orthtd::testing::random_tensor;

namespace {

std::vector<double> triple_loop(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t t = 0; t < k; ++t) out[i * m + j] += a[i * k + t] * b[t * m + j];
  return out;
}

double check(const std::function<Tensor<double>()>& f, std::vector<GradCheckInput> in) {
  return finite_diff_check(f, std::move(in)).max_rel_error;
}

}  // namespace

TEST(Affine, IdentityMapsToIdentity) {
  Tensor<double> eye({2, 2}, std::vector<double>{1, 0, 0, 1});
  auto y = affine(eye, eye, Tensor<double>({2}, 0.0));
  EXPECT_EQ(y.data(), eye.data());
}

TEST(Affine, BiasGradientOfSumIsOnes) {
  std::mt19937_64 rng(2);
  auto x = random_tensor({5, 3}, rng);
  auto w = random_tensor({3, 4}, rng);
  Tensor<double> b({4}, 0.0, true);
  sum_all(affine(x, w, b)).backward();
  for (double g : b.grad()) EXPECT_DOUBLE_EQ(g, 5.0);
}

TEST(Affine, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor({3, 4}, rng);
    auto w = random_tensor({4, 2}, rng);
    auto b = random_tensor({2}, rng);
    auto y = affine(x, w, b);
    auto ref = triple_loop(x, w);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(y[i * 2 + j], ref[i * 2 + j] + b[j], 1e-12);
    auto mm = matmul(x, w);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(mm[i], ref[i], 1e-12);
  }
}

TEST(Affine, InnerDimensionMismatchThrows) {
  EXPECT_THROW(affine(Tensor<double>({2, 3}), Tensor<double>({4, 2}), Tensor<double>({2})), ShapeError);
  EXPECT_THROW(affine(Tensor<double>({2, 3}), Tensor<double>({3, 2}), Tensor<double>({3})), ShapeError);
}

TEST(Affine, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  auto x = random_tensor({3, 4}, rng), w = random_tensor({4, 2}, rng), b = random_tensor({2}, rng);
  auto target = random_tensor({3, 2}, rng);
  EXPECT_LT(check([&] { return sum_all(mul(affine(x, w, b), target)); }, {{"x", x}, {"w", w}, {"b", b}}), 1e-7);
}

TEST(Gelu, ZeroAndReflectionIdentity) {
  EXPECT_EQ(gelu(Tensor<double>({1}, 0.0))[0], 0.0);
  std::mt19937_64 rng(5);
  auto x = random_tensor({10000}, rng, -8, 8);
  auto pos = gelu(x), neg = gelu(scale(x, -1.0));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(pos[i] - neg[i], x[i], 1e-12);  // x*Phi(x) + x*Phi(-x) = x
}

TEST(Gelu, UsesExactErfForm) {
  const double x = 0.7;
  const double expected = x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  EXPECT_NEAR(gelu(Tensor<double>({1}, x))[0], expected, 1e-15);
}

TEST(Gelu, GradientAtFixedPoints) {
  Tensor<double> x({4}, std::vector<double>{-2, -0.5, 0.1, 3});
  EXPECT_LT(check([&] { return sum_all(gelu(x)); }, {{"x", x}}), 1e-6);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  Tensor<double> x({1, 4}, 3.0);
  auto y = layer_norm(x, Tensor<double>({4}, 1.0), Tensor<double>({4}, 0.0));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, RowsAreStandardized) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({3, 6}, rng, -5, 5);
  auto y = layer_norm(x, Tensor<double>({6}, 1.0), Tensor<double>({6}, 0.0));
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 6; ++j) mean += y[r * 6 + j] / 6;
    for (std::size_t j = 0; j < 6; ++j) var += (y[r * 6 + j] - mean) * (y[r * 6 + j] - mean) / 6;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(LayerNorm, InvariantToRowShift) {
  std::mt19937_64 rng(7);
  auto x = random_tensor({4, 5}, rng);
  auto shifted = x.clone();
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < 5; ++j) shifted[r * 5 + j] += 10.0 * static_cast<double>(r) - 3.0;
  Tensor<double> g({5}, 1.0), b({5}, 0.0);
  auto y1 = layer_norm(x, g, b), y2 = layer_norm(shifted, g, b);
  for (std::size_t i = 0; i < y1.numel(); ++i) EXPECT_NEAR(y1[i], y2[i], 1e-6);
}

TEST(LayerNorm, RejectsSingleColumn) {
  EXPECT_THROW(layer_norm(Tensor<double>({2, 1}), Tensor<double>({1}, 1.0), Tensor<double>({1})), std::invalid_argument);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  auto x = random_tensor({2, 5}, rng), g = random_tensor({5}, rng), b = random_tensor({5}, rng);
  auto w = random_tensor({2, 5}, rng);
  EXPECT_LT(check([&] { return sum_all(mul(layer_norm(x, g, b), w)); }, {{"x", x}, {"gain", g}, {"bias", b}}), 1e-5);
}

TEST(RowCosine, HandExamples) {
  Tensor<double> a({3, 3}, std::vector<double>{1, 2, 2, 1, 0, 0, 2, -1, 0.5});
  Tensor<double> b({3, 3}, std::vector<double>{2, 1, -2, 0, 3, 0, 2, -1, 0.5});
  auto c = row_cosine(a, b);
  EXPECT_NEAR(c[0], 0.0, 1e-15);  // (2 + 2 - 4) / 9
  EXPECT_NEAR(c[1], 0.0, 1e-15);
  EXPECT_NEAR(c[2], 1.0, 1e-15);
}

TEST(RowCosine, ZeroVectorIsGuardedByEps) {
  Tensor<double> a({1, 2}, 0.0), b({1, 2}, std::vector<double>{1, 1});
  auto c = row_cosine(a, b);
  EXPECT_TRUE(std::isfinite(c[0]));
  EXPECT_EQ(c[0], 0.0);
}

TEST(RowCosine, OutputInUnitIntervalAndShapeChecked) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 200; ++t) {
    auto a = random_tensor({4, 3}, rng, -1e3, 1e3), b = random_tensor({4, 3}, rng, -1e-3, 1e-3);
    const auto c = row_cosine(a, b);
    for (double v : c.data()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_THROW(row_cosine(Tensor<double>({2, 3}), Tensor<double>({2, 4})), ShapeError);
}

TEST(RowCosine, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  auto w = random_tensor({3}, rng);
  EXPECT_LT(check([&] { return sum_all(mul(row_cosine(a, b), w)); }, {{"a", a}, {"b", b}}), 1e-6);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(11);
  auto x = random_tensor({5, 7}, rng, -30, 30);
  auto p = softmax_rows(x);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 7; ++j) s += p[r * 7 + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Embedding, OutOfRangeIdThrows) {
  Tensor<double> table({3, 2}, 1.0);
  std::vector<int> ids{0, 3};
  EXPECT_THROW(embedding(table, ids), std::out_of_range);
}

TEST(Embedding, GradientScattersIntoRows) {
  std::mt19937_64 rng(12);
  auto table = random_tensor({4, 3}, rng);
  std::vector<int> ids{2, 0, 2};
  auto w = random_tensor({3, 3}, rng);
  EXPECT_LT(check([&] { return sum_all(mul(embedding(table, ids), w)); }, {{"table", table}}), 1e-8);
  EXPECT_EQ(table.grad()[3], 0.0);  // row 1 unused
}

TEST(Structural, ConcatSliceInterleaveRoundTrip) {
  std::mt19937_64 rng(13);
  auto a = random_tensor({2, 3}, rng), b = random_tensor({2, 2}, rng);
  auto c = concat_cols(std::vector<Tensor<double>>{a, b});
  EXPECT_EQ(slice_cols(c, 0, 3).data(), a.data());
  EXPECT_EQ(slice_cols(c, 3, 5).data(), b.data());
  auto a2 = random_tensor({2, 3}, rng);
  auto seq = interleave_rows(std::vector<Tensor<double>>{a, a2});
  EXPECT_EQ(take_slot(seq, 2, 0).data(), a.data());
  EXPECT_EQ(take_slot(seq, 2, 1).data(), a2.data());
  auto m = mean_slots(seq, 2);
  for (std::size_t i = 0; i < m.numel(); ++i) EXPECT_NEAR(m[i], 0.5 * (a[i] + a2[i]), 1e-15);
}

TEST(Structural, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(14);
  auto a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng), v = random_tensor({3}, rng);
  auto s = random_tensor({2}, rng), k = random_tensor({1}, rng);
  auto w6 = random_tensor({2, 6}, rng), w3 = random_tensor({2, 3}, rng);
  auto f = [&] {
    auto seq = interleave_rows(std::vector<Tensor<double>>{a, b});
    auto parts = add_scalars(std::vector<Tensor<double>>{
        sum_all(mul(concat_cols(std::vector<Tensor<double>>{a, b}), w6)),
        sum_all(mul(add_row(mean_slots(seq, 2), v), w3)),
        sum_all(mul(scale_rows(take_slot(seq, 2, 1), s), w3)),
        mean_all(mul(scale_by(sigmoid(a), element(k, 0)), exp(b))),
        sum_all(mul(softmax_rows(sub(a, b)), w3)),
        sum_all(abs(add(a, Tensor<double>({2, 3}, 2.0)))),
        sum_all(mul(broadcast_rows(v, 2), w3)),
        sum_all(mul(column(b, 1), s)),
        sum_all(mul(reshape(a, {3, 2}), reshape(w3, {3, 2}))),
    });
    return parts;
  };
  EXPECT_LT(check(f, {{"a", a}, {"b", b}, {"v", v}, {"s", s}, {"k", k}}), 1e-6);
}

TEST(Dropout, ZeroRateIsIdentityAndScalingPreservesMean) {
  std::mt19937_64 rng(15);
  Tensor<double> x({1, 20000}, 1.0);
  auto same = dropout(x, 0.0, rng);
  EXPECT_EQ(same.data(), x.data());
  auto d = dropout(x, 0.25, rng);
  double mean = 0;
  for (double v : d.data()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-12);
    mean += v / 20000.0;
  }
  EXPECT_NEAR(mean, 1.0, 0.03);
}
