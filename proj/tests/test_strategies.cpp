#include <gtest/gtest.h>

#include <set>

#include "orthtd/model/strategies.hpp"
#include "orthtd/numerics/grad_check.hpp"
#include "test_util.hpp"

using namespace orthtd;
using orthtd::testing::random_tensor;
using orthtd::testing::tiny_model_spec;

namespace {

struct Fixture {
  Cohort cohort = orthtd::testing::tiny_cohort(20);
  Batch batch = orthtd::testing::tiny_batch(cohort);
};

void zero(Tensor<double>& t) { std::fill(t.data().begin(), t.data().end(), 0.0); }

Cohort single_task_cohort(const Cohort& c) {
  Cohort out = c;
  out.schema.tasks = {c.schema.tasks[0]};
  for (auto& r : out.records) {
    r.labels.resize(1);
    r.label_present.resize(1);
  }
  return out;
}

}  // namespace

TEST(Strategies, NamesRoundTripAndUnknownNameRejected) {
  for (auto s : kAllStrategies) EXPECT_EQ(strategy_from_string(to_string(s)), s);
  try {
    strategy_from_string("pcgrad");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("pcgrad"), std::string::npos);
  }
}

TEST(Strategies, EveryStrategyEmitsKProbabilityVectors) {
  Fixture f;
  for (auto kind : kAllStrategies) {
    auto model = build_strategy<double>(tiny_model_spec(f.cohort.schema, kind));
    const auto out = model->forward(f.batch);
    ASSERT_EQ(out.probabilities.size(), 2u) << to_string(kind);
    for (const auto& p : out.probabilities) {
      ASSERT_EQ(p.shape(), (Shape{20}));
      for (double v : p.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
      }
    }
    const auto loss = model->objective(out, f.batch, LossConfig{});
    EXPECT_TRUE(std::isfinite(loss.item())) << to_string(kind);
  }
}

TEST(Strategies, OnlyDecomposingStrategiesReportOrtho) {
  Fixture f;
  EXPECT_TRUE(build_strategy<double>(tiny_model_spec(f.cohort.schema, Strategy::orthtd))->forward(f.batch).ortho);
  for (auto kind : {Strategy::hard_sharing, Strategy::uncertainty, Strategy::cross_stitch, Strategy::mmoe})
    EXPECT_FALSE(build_strategy<double>(tiny_model_spec(f.cohort.schema, kind))->forward(f.batch).ortho) << to_string(kind);
}

TEST(Strategies, OrthTDObjectiveAddsWeightedOrtho) {
  Fixture f;
  auto model = build_strategy<double>(tiny_model_spec(f.cohort.schema, Strategy::orthtd));
  const auto out = model->forward(f.batch);
  const auto losses = task_losses(out.probabilities, f.batch, LossConfig{});
  const double task = (losses[0]->item() + losses[1]->item()) / 2;
  EXPECT_NEAR(model->objective(out, f.batch, LossConfig{})[0], task + 0.1 * out.ortho->item(), 1e-14);
}

TEST(Strategies, OrthTDHasMoreParametersThanHardSharing) {
  Fixture f;
  const auto orth = build_strategy<double>(tiny_model_spec(f.cohort.schema, Strategy::orthtd));
  const auto hard = build_strategy<double>(tiny_model_spec(f.cohort.schema, Strategy::hard_sharing));
  // Identical backbones; the decomposition adds K + 1 projections and wider head inputs.
  std::size_t backbone = 0;
  for (const auto& p : hard->parameters().all())
    if (p.name.rfind("backbone.", 0) == 0) backbone += p.tensor.numel();
  std::size_t orth_backbone = 0;
  for (const auto& p : orth->parameters().all())
    if (p.name.rfind("backbone.", 0) == 0) orth_backbone += p.tensor.numel();
  EXPECT_EQ(backbone, orth_backbone);
  // d_hidden 8, shared = specific = 4, head hidden 4:
  // projections: 3 x (8*4 + 4 + 2*4) = 132; heads: 2 x (8*4 + 4 + 4 + 1) = 82.
  EXPECT_EQ(orth->parameters().scalar_count() - orth_backbone, 132u + 82u);
  EXPECT_EQ(hard->parameters().scalar_count() - backbone, 82u);
  EXPECT_GT(orth->parameters().scalar_count(), hard->parameters().scalar_count());
}

TEST(Strategies, SingleTaskBranchesShareNothing) {
  Fixture f;
  auto model = build_strategy<double>(tiny_model_spec(f.cohort.schema, Strategy::single_task));
  std::size_t counts[2] = {0, 0};
  for (const auto& p : model->parameters().all()) {
    const bool b0 = p.name.rfind("branch0.", 0) == 0, b1 = p.name.rfind("branch1.", 0) == 0;
    ASSERT_TRUE(b0 != b1) << p.name;
    counts[b1] += p.tensor.numel();
  }
  EXPECT_EQ(counts[0], counts[1]);
  // Each branch's loss only reaches its own parameters.
  const auto out = model->forward(f.batch);
  model->parameters().zero_grad();
  sum_all(out.probabilities[0]).backward();
  for (const auto& p : model->parameters().all()) {
    if (p.name.rfind("branch1.", 0) != 0) continue;
    for (double g : p.tensor.grad()) EXPECT_EQ(g, 0.0) << p.name;
  }
}

TEST(Strategies, SingleTaskEqualsHardSharingWhenThereIsOneTask) {
  const auto cohort = single_task_cohort(orthtd::testing::tiny_cohort(20));
  const auto batch = orthtd::testing::tiny_batch(cohort);
  auto spec = tiny_model_spec(cohort.schema, Strategy::hard_sharing);
  auto hard = build_strategy<double>(spec);
  spec.strategy.kind = Strategy::single_task;
  spec.strategy.single_task_plain_head = true;
  auto single = build_strategy<double>(spec);
  ASSERT_EQ(hard->parameters().size(), single->parameters().size());
  // Copy weights across by name so the check does not rely on initialization order.
  for (auto& p : hard->parameters().all()) {
    auto* q = single->parameters().find("branch0." + p.name);
    ASSERT_NE(q, nullptr) << p.name;
    q->tensor.data() = p.tensor.data();
  }
  const auto a = hard->forward(batch), b = single->forward(batch);
  EXPECT_EQ(a.probabilities[0].data(), b.probabilities[0].data());
  EXPECT_EQ(hard->objective(a, batch, LossConfig{}).item(), single->objective(b, batch, LossConfig{}).item());
}

TEST(Strategies, HardSharingZeroHeadsPredictOneHalf) {
  Fixture f;
  HardSharingModel<double> model(tiny_model_spec(f.cohort.schema, Strategy::hard_sharing));
  for (std::size_t k = 0; k < 2; ++k) {
    zero(model.head(k).output.weight);
    zero(model.head(k).output.bias);
  }
  const auto out = model.forward(f.batch);
  for (const auto& p : out.probabilities)
    for (double v : p.data()) EXPECT_EQ(v, 0.5);
}

TEST(Strategies, UncertaintyObjectiveStartsAsPlainSum) {
  Fixture f;
  UncertaintyModel<double> model(tiny_model_spec(f.cohort.schema, Strategy::uncertainty));
  ASSERT_NE(model.parameters().find("uncertainty.log_var"), nullptr);
  const auto out = model.forward(f.batch);
  const auto losses = task_losses(out.probabilities, f.batch, LossConfig{});
  EXPECT_NEAR(model.objective(out, f.batch, LossConfig{})[0], losses[0]->item() + losses[1]->item(), 1e-14);
  model.parameters().zero_grad();
  model.objective(out, f.batch, LossConfig{}).backward();
  for (std::size_t k = 0; k < 2; ++k)
    EXPECT_NEAR(model.log_variances().grad()[k], 1.0 - losses[k]->item(), 1e-12);
}

TEST(CrossStitch, IdentityPassesFeaturesThrough) {
  std::mt19937_64 rng(1);
  const std::vector<Tensor<double>> feats{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
  Tensor<double> eye({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto out = cross_stitch_mix(feats, eye);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(out[k].data(), feats[k].data());
}

TEST(CrossStitch, EqualRowsGiveEveryBranchTheSameFeature) {
  std::mt19937_64 rng(2);
  const std::vector<Tensor<double>> feats{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
  Tensor<double> alpha({2, 2}, std::vector<double>{0.3, 0.7, 0.3, 0.7});
  const auto out = cross_stitch_mix(feats, alpha);
  EXPECT_EQ(out[0].data(), out[1].data());
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(out[0][i], 0.3 * feats[0][i] + 0.7 * feats[1][i], 1e-15);
  EXPECT_THROW(cross_stitch_mix(feats, Tensor<double>({3, 3})), ShapeError);
}

TEST(CrossStitch, AlphaGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), alpha = random_tensor({2, 2}, rng);
  auto w0 = random_tensor({3, 4}, rng), w1 = random_tensor({3, 4}, rng);
  const auto r = finite_diff_check(
      [&] {
        const auto out = cross_stitch_mix(std::vector<Tensor<double>>{a, b}, alpha);
        return add(sum_all(mul(out[0], w0)), sum_all(mul(out[1], mul(out[1], w1))));
      },
      {{"alpha", alpha}, {"a", a}, {"b", b}});
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(CrossStitch, InitializationAndIdentityAblation) {
  Fixture f;
  CrossStitchModel<double> model(tiny_model_spec(f.cohort.schema, Strategy::cross_stitch));
  const std::vector<double> init{0.9, 0.1, 0.1, 0.9};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(model.alpha()[i], init[i], 1e-15);
  model.alpha().data() = {1, 0, 0, 1};
  const auto out = model.forward(f.batch);
  const auto h = model.backbone().forward(f.batch);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(out.probabilities[k].data(), model.head(k)(model.branch(k)(h)).data());
}

TEST(MMoE, IdenticalExpertsIgnoreTheGates) {
  ParameterStore<double> store(4);
  MixtureOfExperts<double> moe(store, "m", 6, 5, 3, 2);
  for (std::size_t e = 1; e < 3; ++e) {
    moe.experts[e].weight.data() = moe.experts[0].weight.data();
    moe.experts[e].bias.data() = moe.experts[0].bias.data();
  }
  std::mt19937_64 rng(5);
  const auto h = random_tensor({4, 6}, rng);
  const auto expected = gelu(affine(h, moe.experts[0].weight, moe.experts[0].bias));
  for (const auto& feat : moe.forward(h))
    for (std::size_t i = 0; i < feat.numel(); ++i) EXPECT_NEAR(feat[i], expected[i], 1e-14);
}

TEST(MMoE, SaturatedGateRoutesToOneExpert) {
  ParameterStore<double> store(6);
  MixtureOfExperts<double> moe(store, "m", 6, 5, 3, 2);
  zero(moe.gates[1].weight);
  moe.gates[1].bias.data() = {-800.0, 800.0, -800.0};
  std::mt19937_64 rng(7);
  const auto h = random_tensor({4, 6}, rng);
  const auto expected = gelu(affine(h, moe.experts[1].weight, moe.experts[1].bias));
  const auto feats = moe.forward(h);
  EXPECT_EQ(feats[1].data(), expected.data());
}

TEST(MMoE, GatesAreSimplexPointsAndTooFewExpertsRejected) {
  Fixture f;
  auto spec = tiny_model_spec(f.cohort.schema, Strategy::mmoe);
  const auto out = build_strategy<double>(spec)->forward(f.batch);
  ASSERT_EQ(out.gates.size(), 2u);
  for (const auto& g : out.gates) {
    ASSERT_EQ(g.shape(), (Shape{20, 4}));
    for (std::size_t r = 0; r < 20; ++r) {
      double total = 0;
      for (std::size_t e = 0; e < 4; ++e) {
        EXPECT_GE(g[r * 4 + e], 0.0);
        total += g[r * 4 + e];
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
  spec.strategy.experts = 1;
  EXPECT_THROW(build_strategy<double>(spec), std::invalid_argument);
}

TEST(Strategies, OrthTDWholeModelGradientMatchesFiniteDifferences) {
  const auto cohort = orthtd::testing::tiny_cohort(10);
  auto batch = orthtd::testing::tiny_batch(cohort);
  const std::vector<std::size_t> rows{0, 3, 7};
  batch = select_rows(batch, rows);
  auto model = build_strategy<double>(tiny_model_spec(cohort.schema, Strategy::orthtd));
  std::vector<GradCheckInput> inputs;
  for (auto& p : model->parameters().all())
    if (p.name.find("key.bias") == std::string::npos) inputs.push_back({p.name, p.tensor});
  LossConfig loss;
  loss.margin = 0.0;  // keep every negative on the smooth branch
  // Coordinates below 1e-6 are compared absolutely; their difference quotients are mostly roundoff.
  const auto r =
      finite_diff_check([&] { return model->objective(model->forward(batch), batch, loss); }, inputs, 1e-5, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_tensor << "[" << r.worst_index << "] " << r.analytic << " vs " << r.numeric;
}
