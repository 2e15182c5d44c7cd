#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "orthtd/experiment.hpp"

using namespace orthtd;
namespace fs = std::filesystem;

namespace {

// Small enough that a full generate -> train -> evaluate takes well under a second.
nlohmann::json tiny_config(const fs::path& out) {
  return {{"synthetic", {{"n_patients", 200}, {"vocab_size", 40}, {"text_max_tokens", 8}}},
          {"tabular", {{"embedding_dim", 4}}},
          {"text", {{"embedding_dim", 8}, {"layers", 1}, {"heads", 2}}},
          {"fusion", {{"d_hidden", 8}, {"layers", 1}, {"heads", 2}}},
          {"train", {{"epochs", 2}, {"batch_size", 64}}},
          {"seeds", {1, 2}},
          {"output_dir", out.string()}};
}

class Workspace : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("orthtd_exp_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path write_config(const nlohmann::json& j, const char* name = "config.json") const {
    std::ofstream(root_ / name) << j.dump(2);
    return root_ / name;
  }

  fs::path root_;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct Invocation {
  int code = -1;
  std::string err;
};

// Runs the CLI binary with stderr captured; skips when the binary is not known.
Invocation run_cli(const std::string& args, const fs::path& scratch) {
  const char* cli = std::getenv("ORTHTD_CLI");
  if (!cli) return {};
  const auto err = scratch / "stderr.txt";
  const std::string cmd = std::string("'") + cli + "' " + args + " > /dev/null 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Invocation inv;
  inv.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  inv.err = slurp(err);
  return inv;
}

#define REQUIRE_CLI() \
  if (!std::getenv("ORTHTD_CLI")) GTEST_SKIP() << "ORTHTD_CLI not set"

}  // namespace

TEST(Config, UnknownKeysAreRejectedByName) {
  auto j = tiny_config("runs");
  j["train"]["learning_rate"] = 0.1;
  try {
    config_from_json(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos) << e.what();
  }
  auto top = tiny_config("runs");
  top["optimiser"] = "sgd";
  EXPECT_THROW(config_from_json(top), ConfigError);
  auto both = tiny_config("runs");
  both["data"] = {{"schema", "s.json"}, {"records", "r.jsonl"}};
  EXPECT_THROW(config_from_json(both), ConfigError);
}

TEST(Config, ProfilesDifferOnlyInSizes) {
  const auto desk = default_config(Profile::desk), paper = default_config(Profile::paper);
  EXPECT_EQ(paper.fusion.d_hidden, 240u);
  EXPECT_EQ(paper.fusion.layers, 4u);
  EXPECT_EQ(paper.fusion.heads, 8u);
  EXPECT_EQ(paper.synthetic->n_patients, 12430u);
  EXPECT_EQ(desk.synthetic->n_patients, 4000u);
  EXPECT_EQ(desk.loss, paper.loss);
  EXPECT_EQ(desk.decomp, paper.decomp);
  EXPECT_EQ(desk.train.epochs, paper.train.epochs);
  EXPECT_EQ(desk.train.batch_size, paper.train.batch_size);
  EXPECT_EQ(desk.seeds, (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
}

TEST(Config, JsonRoundTripIsStable) {
  const auto cfg = config_from_json(tiny_config("somewhere"));
  const auto again = config_from_json(nlohmann::json::parse(to_json(cfg).dump()));
  EXPECT_EQ(to_json(again).dump(), to_json(cfg).dump());
  EXPECT_EQ(again.fusion.d_hidden, 8u);
  EXPECT_EQ(again.synthetic->n_patients, 200u);
}

TEST(Ablation, RungsFollowTheLadder) {
  const auto base = config_from_json(tiny_config("x"));
  const auto a = rung_config(base, Rung::a), b = rung_config(base, Rung::b);
  const auto c = rung_config(base, Rung::c), d = rung_config(base, Rung::d);
  EXPECT_FALSE(a.fusion.use_global_token);
  EXPECT_EQ(a.strategy.kind, Strategy::hard_sharing);
  EXPECT_TRUE(b.fusion.use_global_token);
  EXPECT_EQ(b.strategy.kind, Strategy::hard_sharing);
  EXPECT_EQ(c.strategy.kind, Strategy::orthtd);
  EXPECT_EQ(c.loss.lambda_ortho, 0.0);
  EXPECT_EQ(d.strategy.kind, Strategy::orthtd);
  EXPECT_EQ(d.loss.lambda_ortho, 0.1);
}

TEST(Summary, MeanAndSampleDeviation) {
  const auto m = mean_sd({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_DOUBLE_EQ(m.sd, std::sqrt(5.0 / 3.0));
  EXPECT_EQ(mean_sd({7.0}).sd, 0.0);
  EXPECT_EQ(mean_sd({}).n, 0u);
}

TEST_F(Workspace, AblationTableHasFourRungsPerSeed) {
  const auto cfg = config_from_json(tiny_config(root_));
  const auto table = run_ablation(cfg, root_ / "ablation", false);
  EXPECT_EQ(table.rows.size(), 8u);
  ASSERT_EQ(table.summary.size(), 4u);
  for (const auto& s : table.summary) EXPECT_EQ(s.auprc.n, 2u) << s.label;
  EXPECT_EQ(table.summary[3].train_ortho.n, 2u);  // rung (d) reports L_ortho
  EXPECT_EQ(table.summary[2].train_ortho.n, 2u);  // and so does rung (c), for contrast
  EXPECT_EQ(table.summary[1].train_ortho.n, 0u);
  EXPECT_TRUE(fs::exists(root_ / "ablation" / "ablation_runs.csv"));
  EXPECT_TRUE(fs::exists(root_ / "ablation" / "ablation_summary.csv"));
  EXPECT_THROW(run_ablation(cfg, root_ / "ablation", false), ConfigError);
}

TEST_F(Workspace, CompareTableHasSixStrategies) {
  auto j = tiny_config(root_);
  j["seeds"] = {3};
  const auto table = run_compare(config_from_json(j), root_ / "compare", false);
  ASSERT_EQ(table.summary.size(), 6u);
  EXPECT_EQ(table.rows.size(), 6u);
  for (auto kind : kAllStrategies)
    EXPECT_TRUE(fs::exists(root_ / "compare" / (std::string(to_string(kind)) + "_seed3") / "checkpoint.otd"));
}

TEST_F(Workspace, CliTrainEmitsArtifactsAndRefusesToOverwrite) {
  REQUIRE_CLI();
  const auto config = write_config(tiny_config(root_ / "out"));
  const auto inv = run_cli("train --config '" + config.string() + "' --seed 7", root_);
  ASSERT_EQ(inv.code, 0) << inv.err;
  const auto run = root_ / "out" / "orthtd_seed7";
  for (const char* f : {"config.json", "checkpoint.otd", "history.jsonl", "report.json", "roc_task1.csv", "pr_task1.csv"})
    EXPECT_TRUE(fs::exists(run / f)) << f;
  const auto history = slurp(run / "history.jsonl");
  EXPECT_EQ(std::count(history.begin(), history.end(), '\n'), 2);

  const auto again = run_cli("train --config '" + config.string() + "' --seed 7", root_);
  EXPECT_EQ(again.code, 2);
  EXPECT_NE(again.err.find("exists"), std::string::npos) << again.err;
  EXPECT_EQ(slurp(run / "history.jsonl"), history);

  const auto eval = run_cli("evaluate --config '" + config.string() + "' --seed 7", root_);
  ASSERT_EQ(eval.code, 0) << eval.err;
  EXPECT_EQ(slurp(run / "evaluation" / "report.json"), slurp(run / "report.json"));
}

TEST_F(Workspace, CliSameSeedGivesByteIdenticalHistory) {
  REQUIRE_CLI();
  const auto a = write_config(tiny_config(root_ / "a"), "a.json");
  const auto b = write_config(tiny_config(root_ / "b"), "b.json");
  ASSERT_EQ(run_cli("train --config '" + a.string() + "' --seed 7", root_).code, 0);
  ASSERT_EQ(run_cli("train --config '" + b.string() + "' --seed 7", root_).code, 0);
  const auto ha = slurp(root_ / "a" / "orthtd_seed7" / "history.jsonl");
  EXPECT_FALSE(ha.empty());
  EXPECT_EQ(ha, slurp(root_ / "b" / "orthtd_seed7" / "history.jsonl"));
  EXPECT_EQ(slurp(root_ / "a" / "orthtd_seed7" / "report.json"), slurp(root_ / "b" / "orthtd_seed7" / "report.json"));
}

TEST_F(Workspace, CliSeedFallsBackToEnvironment) {
  REQUIRE_CLI();
  const auto config = write_config(tiny_config(root_ / "out"));
  ASSERT_EQ(run_cli("train --strategy hard_sharing --config '" + config.string() + "'", root_).code, 0);
  EXPECT_TRUE(fs::exists(root_ / "out" / "hard_sharing_seed1"));
  setenv("ORTHTD_SEED", "12", 1);
  const auto inv = run_cli("train --strategy hard_sharing --config '" + config.string() + "'", root_);
  unsetenv("ORTHTD_SEED");
  ASSERT_EQ(inv.code, 0) << inv.err;
  EXPECT_TRUE(fs::exists(root_ / "out" / "hard_sharing_seed12"));
}

TEST_F(Workspace, CliConfigErrorsExitWithTwo) {
  REQUIRE_CLI();
  auto j = tiny_config(root_ / "out");
  j["fusion"]["width"] = 64;
  const auto config = write_config(j);
  const auto inv = run_cli("train --config '" + config.string() + "'", root_);
  EXPECT_EQ(inv.code, 2);
  EXPECT_NE(inv.err.find("width"), std::string::npos) << inv.err;
  EXPECT_FALSE(fs::exists(root_ / "out"));
  EXPECT_EQ(run_cli("train --strategy nope", root_).code, 2);
  EXPECT_EQ(run_cli("frobnicate", root_).code, 2);
}

TEST_F(Workspace, CliNumericFailureExitsWithThree) {
  REQUIRE_CLI();
  auto j = tiny_config(root_ / "out");
  j["train"]["lr_main"] = 1e300;  // the first update overflows every weight
  const auto inv = run_cli("train --strategy hard_sharing --config '" + write_config(j).string() + "'", root_);
  EXPECT_EQ(inv.code, 3) << inv.err;
  EXPECT_NE(inv.err.find("numeric failure"), std::string::npos) << inv.err;
}

TEST_F(Workspace, CliGenerateWritesCohortSchemaAndLatents) {
  REQUIRE_CLI();
  const auto config = write_config(tiny_config(root_ / "gen"));
  const auto inv = run_cli("generate --latents --config '" + config.string() + "' --seed 4", root_);
  ASSERT_EQ(inv.code, 0) << inv.err;
  for (const char* f : {"schema.json", "cohort.jsonl", "synthetic.json", "latents.jsonl"})
    EXPECT_TRUE(fs::exists(root_ / "gen" / f)) << f;
  const auto cohort = load_cohort(root_ / "gen" / "cohort.jsonl", load_schema(root_ / "gen" / "schema.json"));
  EXPECT_EQ(cohort.records.size(), 200u);
}
