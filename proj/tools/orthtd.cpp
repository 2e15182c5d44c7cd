// orthtd command-line entry point.
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "orthtd/experiment.hpp"

namespace {

using namespace orthtd;

struct CommonOptions {
  std::string config;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::string strategy;
  std::string out;
  bool overwrite = false;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_strategy) {
  cmd->add_option("--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--profile", o.profile, "size preset")->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--seed", o.seed, "run seed (falls back to ORTHTD_SEED, then the config)");
  if (with_strategy)
    cmd->add_option("--strategy", o.strategy, "multi-task strategy")
        ->check(CLI::IsMember({"orthtd", "single_task", "hard_sharing", "uncertainty", "cross_stitch", "mmoe"}));
  cmd->add_option("--out", o.out, "output directory (overrides the config)");
  cmd->add_flag("--overwrite", o.overwrite, "replace existing output");
}

ExperimentConfig resolve_config(const CommonOptions& o) {
  std::optional<Profile> profile;
  if (!o.profile.empty()) profile = profile_from_string(o.profile);
  ExperimentConfig cfg = o.config.empty() ? default_config(profile.value_or(Profile::desk)) : load_config(o.config, profile);
  if (!o.strategy.empty()) cfg.strategy.kind = strategy_from_string(o.strategy);
  if (!o.out.empty()) cfg.output_dir = o.out;
  return cfg;
}

/// --seed, then ORTHTD_SEED, then the config value.
std::uint64_t resolve_seed(const CommonOptions& o, const ExperimentConfig& cfg) {
  if (o.seed) return *o.seed;
  if (const char* env = std::getenv("ORTHTD_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("ORTHTD_SEED is not an unsigned integer: '") + env + "'");
  }
  return cfg.seed;
}

void print_report(const EvaluationReport& r, std::ostream& os) {
  auto f = [](const std::optional<double>& v) {
    if (!v) return std::string("undefined");
    char b[32];
    std::snprintf(b, sizeof b, "%.4f", *v);
    return std::string(b);
  };
  for (const auto& t : r.tasks)
    os << "  " << t.name << ": n=" << t.n << " pos=" << t.positives << " AUC=" << f(t.auc) << " AUPRC=" << f(t.auprc)
       << " Brier=" << f(t.brier) << '\n';
  os << "  macro: AUC=" << f(r.macro_auc) << " AUPRC=" << f(r.macro_auprc) << " Brier=" << f(r.macro_brier);
  if (r.ortho) os << " L_ortho=" << f(r.ortho);
  os << '\n';
}

int cmd_generate(const CommonOptions& o, bool latents, bool any_as_or) {
  auto cfg = resolve_config(o);
  if (cfg.data) throw ConfigError("generate: the config names a data block; generation needs a synthetic block");
  auto spec = cfg.synthetic.value_or(SyntheticSpec{});
  if (o.seed || std::getenv("ORTHTD_SEED")) spec.seed = resolve_seed(o, cfg);
  if (any_as_or) spec.any_as_or = true;
  spec.validate();
  const std::filesystem::path dir = cfg.output_dir;
  claim_run_dir(dir, o.overwrite);
  const auto [cohort, truth] = generate_synthetic(spec);
  save_schema(cohort.schema, dir / "schema.json");
  write_cohort(cohort, dir / "cohort.jsonl");
  {
    std::ofstream os(dir / "synthetic.json");
    os << synthetic_spec_to_json(spec).dump(2) << '\n';
  }
  if (latents) write_latents(truth, cohort, dir / "latents.jsonl");
  std::cout << "wrote " << cohort.records.size() << " records to " << (dir / "cohort.jsonl").string() << '\n';
  for (std::size_t k = 0; k < cohort.schema.task_count(); ++k) {
    const auto c = label_counts(cohort, k);
    std::cout << "  " << cohort.schema.tasks[k] << ": " << c.positives << " positives of " << c.positives + c.negatives
              << '\n';
  }
  return kExitOk;
}

int cmd_train(const CommonOptions& o) {
  const auto cfg = resolve_config(o);
  const auto seed = resolve_seed(o, cfg);
  const auto dir = cfg.output_dir / run_id(cfg, seed);
  const auto result = run_experiment(cfg, seed, dir, o.overwrite);
  std::cout << "run " << dir.string() << " (" << result.history.size() << " epochs, final loss "
            << result.history.back().loss << ")\n";
  print_report(result.report, std::cout);
  return kExitOk;
}

int cmd_evaluate(const CommonOptions& o, std::string checkpoint) {
  const auto cfg = resolve_config(o);
  const auto seed = resolve_seed(o, cfg);
  const auto dir = cfg.output_dir / run_id(cfg, seed);
  if (checkpoint.empty()) checkpoint = (dir / "checkpoint.otd").string();
  const auto report = run_evaluation(cfg, seed, checkpoint, dir / "evaluation", o.overwrite);
  std::cout << "evaluated " << checkpoint << '\n';
  print_report(report, std::cout);
  return kExitOk;
}

RunCallback progress_printer() {
  return [](const std::string& label, std::uint64_t seed, const RunResult& r) {
    std::cerr << "  " << label << " seed " << seed << ": macro AUPRC "
              << (r.report.macro_auprc ? std::to_string(*r.report.macro_auprc) : "undefined") << '\n';
  };
}

int cmd_ablate(const CommonOptions& o) {
  auto cfg = resolve_config(o);
  if (o.seed) cfg.seeds = {*o.seed};
  const auto table = run_ablation(cfg, cfg.output_dir / "ablation", o.overwrite,
                                  {std::begin(kAllRungs), std::end(kAllRungs)}, progress_printer());
  print_summary(table, std::cout);
  return kExitOk;
}

int cmd_compare(const CommonOptions& o) {
  auto cfg = resolve_config(o);
  if (o.seed) cfg.seeds = {*o.seed};
  const auto table = run_compare(cfg, cfg.output_dir / "compare", o.overwrite,
                                 {std::begin(kAllStrategies), std::end(kAllStrategies)}, progress_printer());
  print_summary(table, std::cout);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal multi-task risk prediction with orthogonal task decomposition"};
  app.require_subcommand(1);

  CommonOptions gen_opts, train_opts, eval_opts, ablate_opts, compare_opts;
  bool latents = false, any_as_or = false;
  std::string checkpoint;

  auto* gen = app.add_subcommand("generate", "write a synthetic cohort, its schema, and optionally the latents");
  add_common(gen, gen_opts, false);
  gen->add_flag("--latents", latents, "also write per-patient ground-truth latents");
  gen->add_flag("--any-as-or", any_as_or, "derive the first task as the OR of the others");

  auto* tr = app.add_subcommand("train", "generate/load, split, train, and evaluate one run");
  add_common(tr, train_opts, true);

  auto* ev = app.add_subcommand("evaluate", "re-evaluate a saved checkpoint on the held-out split");
  add_common(ev, eval_opts, true);
  ev->add_option("--checkpoint", checkpoint, "checkpoint path (default: <out>/<strategy>_seed<seed>/checkpoint.otd)");

  auto* ab = app.add_subcommand("ablate", "four-rung ablation ladder over the configured seeds");
  add_common(ab, ablate_opts, false);

  auto* cmp = app.add_subcommand("compare", "all six strategies over the configured seeds");
  add_common(cmp, compare_opts, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_generate(gen_opts, latents, any_as_or);
    if (*tr) return cmd_train(train_opts);
    if (*ev) return cmd_evaluate(eval_opts, checkpoint);
    if (*ab) return cmd_ablate(ablate_opts);
    if (*cmp) return cmd_compare(compare_opts);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}
