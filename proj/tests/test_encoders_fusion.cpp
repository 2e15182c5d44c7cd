#include <gtest/gtest.h>

#include "orthtd/model/fusion.hpp"
#include "orthtd/numerics/grad_check.hpp"
#include "test_util.hpp"

using namespace orthtd;
using orthtd::testing::random_tensor;

namespace {

struct Fixture {
  Cohort cohort = orthtd::testing::tiny_cohort(20);
  Batch batch = orthtd::testing::tiny_batch(cohort);
  ModelSpec spec = orthtd::testing::tiny_model_spec(cohort.schema, Strategy::orthtd);
};

Backbone<double> make_backbone(ParameterStore<double>& store, const ModelSpec& s) {
  return Backbone<double>(store, "bb", s.schema, s.tabular, s.text, s.fusion);
}

std::vector<double> row(const Tensor<double>& t, std::size_t r) {
  return {t.data().begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
          t.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols())};
}

Cohort with_second_note(Cohort c) {
  c.schema.text.push_back({"note2", c.schema.text[0].max_tokens});
  for (auto& r : c.records) r.text.push_back(r.text[0]);
  return c;
}

}  // namespace

TEST(Backbone, ProducesOneHiddenVectorPerRecord) {
  Fixture f;
  ParameterStore<double> store(1);
  auto bb = make_backbone(store, f.spec);
  const auto tokens = bb.modality_tokens(f.batch);
  ASSERT_EQ(tokens.size(), 2u);
  for (const auto& t : tokens) EXPECT_EQ(t.shape(), (Shape{20, 8}));
  EXPECT_EQ(bb.forward(f.batch).shape(), (Shape{20, 8}));
}

TEST(TabularEncoder, CategoricalChangeMovesOnlyThatRecord) {
  Fixture f;
  ParameterStore<double> store(2);
  TabularEncoder<double> enc(store, "tab", f.cohort.schema, f.spec.tabular, 8);
  const auto before = enc.encode(f.batch);
  auto changed = f.batch;
  auto& id = changed.categorical[3 * changed.n_categorical];
  id = (id + 1) % f.cohort.schema.categorical[0].cardinality;
  const auto after = enc.encode(changed);
  EXPECT_NE(row(before, 3), row(after, 3));
  for (std::size_t r = 0; r < 20; ++r) {
    if (r != 3) {
      EXPECT_EQ(row(before, r), row(after, r));
    }
  }
}

TEST(TextEncoder, IdenticalSequencesEncodeIdentically) {
  ParameterStore<double> store(3);
  TextEncoder<double> enc(store, "txt", 12, 5, TextEncoderConfig{4, 1, 2, true}, 8);
  const std::vector<int> tokens{kClsToken, 4, 5, kPadToken, kPadToken, kClsToken, 4, 5, kPadToken, kPadToken};
  const std::vector<std::uint8_t> valid{1, 1, 1, 0, 0, 1, 1, 1, 0, 0};
  const auto out = enc.encode(tokens, valid, 2, 5);
  EXPECT_EQ(row(out, 0), row(out, 1));
}

TEST(TextEncoder, EmptyNoteIsFiniteAndPaddingIsIgnored) {
  ParameterStore<double> store(4);
  TextEncoder<double> enc(store, "txt", 12, 4, TextEncoderConfig{4, 1, 2, true}, 8);
  const std::vector<std::uint8_t> valid{1, 0, 0, 0, 1, 0, 0, 0};
  const std::vector<int> a{kClsToken, kPadToken, kPadToken, kPadToken, kClsToken, 7, 9, 3};
  const auto out = enc.encode(a, valid, 2, 4);
  for (double v : out.data()) EXPECT_TRUE(std::isfinite(v));
  // Masked key positions cannot influence the CLS output.
  EXPECT_EQ(row(out, 0), row(out, 1));
}

TEST(TextEncoder, RejectsOutOfVocabularyAndOverlongInput) {
  ParameterStore<double> store(5);
  TextEncoder<double> enc(store, "txt", 6, 3, TextEncoderConfig{4, 1, 2, true}, 8);
  const std::vector<std::uint8_t> valid3{1, 1, 1};
  EXPECT_THROW(enc.encode(std::vector<int>{0, 6, 2}, valid3, 1, 3), std::out_of_range);
  const std::vector<std::uint8_t> valid4{1, 1, 1, 1};
  EXPECT_THROW(enc.encode(std::vector<int>{0, 2, 2, 2}, valid4, 1, 4), ShapeError);
}

TEST(TextModality, SharedWeightsRegisterOneEncoder) {
  const auto cohort = with_second_note(orthtd::testing::tiny_cohort(10));
  auto cfg = TextEncoderConfig{4, 1, 2, true};
  ParameterStore<double> shared_store(1), split_store(1), single_store(1);
  TextModality<double> shared(shared_store, "t", cohort.schema, cfg, 8);
  cfg.shared_weights = false;
  TextModality<double> split(split_store, "t", cohort.schema, cfg, 8);
  TextModality<double> single(single_store, "t", orthtd::testing::tiny_cohort(10).schema, cfg, 8);
  EXPECT_EQ(shared_store.scalar_count(), single_store.scalar_count());
  EXPECT_EQ(split_store.scalar_count(), 2 * single_store.scalar_count());
  EXPECT_EQ(&shared.encoder_for(0), &shared.encoder_for(1));
  const auto batch = orthtd::testing::tiny_batch(cohort);
  const auto tokens = shared.encode(batch);
  ASSERT_EQ(tokens.size(), 2u);
  EXPECT_EQ(tokens[0].data(), tokens[1].data());  // same text, same encoder
}

TEST(Fusion, GradientMatchesFiniteDifferences) {
  ParameterStore<double> store(6);
  FusionEncoder<double> fusion(store, "fu", FusionConfig{8, 1, 2, 0.0, true}, 2);
  std::mt19937_64 rng(7);
  auto a = random_tensor({3, 8}, rng), b = random_tensor({3, 8}, rng), w = random_tensor({3, 8}, rng);
  std::vector<GradCheckInput> inputs{{"a", a}, {"b", b}};
  for (auto& p : store.all())
    if (p.name.find("key.bias") == std::string::npos) inputs.push_back({p.name, p.tensor});
  const auto r = finite_diff_check([&] { return sum_all(mul(fusion.fuse({a, b}), w)); }, inputs);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_tensor << "[" << r.worst_index << "]";
}

TEST(Fusion, ZeroBlockWeightsCollapseToTheGlobalToken) {
  ParameterStore<double> store(8);
  FusionEncoder<double> fusion(store, "fu", FusionConfig{8, 2, 2, 0.0, true}, 2);
  for (auto& p : store.all()) {
    const bool layer = p.name.find(".block") != std::string::npos;
    const bool norm = p.name.find("norm") != std::string::npos;
    if (layer && !norm) std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0);
  }
  std::mt19937_64 rng(9);
  auto out = fusion.fuse({random_tensor({4, 8}, rng), random_tensor({4, 8}, rng)});
  // Attention and feed-forward contribute nothing, so every record sees only the global slot.
  auto g = add(reshape(fusion.global_token(), {1, 8}), slice_cols(reshape(fusion.slot_embedding(), {1, 24}), 0, 8));
  Tensor<double> ones({8}, 1.0), zeros({8}, 0.0);
  const auto expected = layer_norm(layer_norm(layer_norm(layer_norm(g, ones, zeros), ones, zeros), ones, zeros), ones, zeros);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out[r * 8 + j], expected[j], 1e-12);
}

TEST(Fusion, MeanPoolingWithoutGlobalToken) {
  ParameterStore<double> store(10);
  FusionEncoder<double> fusion(store, "fu", FusionConfig{8, 1, 2, 0.0, false}, 2);
  EXPECT_EQ(fusion.slot_count(), 2u);
  EXPECT_EQ(store.find("fu.global_token"), nullptr);
  std::mt19937_64 rng(11);
  EXPECT_EQ(fusion.fuse({random_tensor({3, 8}, rng), random_tensor({3, 8}, rng)}).shape(), (Shape{3, 8}));
}

TEST(Fusion, RejectsWrongTokenCountOrWidth) {
  ParameterStore<double> store(12);
  FusionEncoder<double> fusion(store, "fu", FusionConfig{8, 1, 2, 0.0, true}, 2);
  EXPECT_THROW(fusion.fuse({Tensor<double>({2, 8})}), ShapeError);
  EXPECT_THROW(fusion.fuse({Tensor<double>({2, 8}), Tensor<double>({2, 6})}), ShapeError);
  EXPECT_THROW(FusionConfig({6, 1, 4, 0.0, true}).validate(), std::invalid_argument);
}

TEST(Backbone, RecordsAreIndependentAndTextMatters) {
  Fixture f;
  ParameterStore<double> store(13);
  auto bb = make_backbone(store, f.spec);
  const auto base = bb.forward(f.batch);
  auto changed = f.batch;
  const std::size_t len = changed.text_len[0];
  changed.text[0][5 * len + 1] = 11;  // row 5, first real slot
  changed.text_valid[0][5 * len + 1] = 1;
  const auto out = bb.forward(changed);
  EXPECT_NE(row(base, 5), row(out, 5));
  for (std::size_t r = 0; r < f.batch.size; ++r) {
    if (r != 5) {
      EXPECT_EQ(row(base, r), row(out, r));
    }
  }
}

TEST(Backbone, EveryParameterReceivesGradient) {
  Fixture f;
  ParameterStore<double> store(14);
  auto bb = make_backbone(store, f.spec);
  std::mt19937_64 rng(15);
  auto w = random_tensor({f.batch.size, 8}, rng);
  sum_all(mul(bb.forward(f.batch), w)).backward();
  for (const auto& p : store.all()) {
    if (p.name.find("key.bias") != std::string::npos) continue;  // softmax shift invariance
    ASSERT_TRUE(p.tensor.has_grad()) << p.name;
    const auto& g = p.tensor.grad();
    EXPECT_TRUE(std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; })) << p.name;
  }
}
