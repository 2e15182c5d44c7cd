// Experiment configuration and the generate -> split -> train -> evaluate
// pipeline, plus the ablation ladder and strategy comparison drivers.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "orthtd/data/split.hpp"
#include "orthtd/model/spec_io.hpp"
#include "orthtd/model/vitals.hpp"
#include "orthtd/train/checkpoint.hpp"
#include "orthtd/train/trainer.hpp"

namespace orthtd {

/// Invalid or inconsistent experiment configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitNumeric = 3 };

struct DataPaths {
  std::filesystem::path schema;
  std::filesystem::path records;
  bool operator==(const DataPaths&) const = default;
};

struct SplitConfig {
  double train_fraction = kDefaultTrainFraction;
  std::size_t stratify_task = 0;
  bool operator==(const SplitConfig&) const = default;
};

struct ExperimentConfig {
  Profile profile = Profile::desk;
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};  // ablate / compare
  std::optional<SyntheticSpec> synthetic;            // used when `data` is absent
  std::optional<DataPaths> data;
  SplitConfig split;
  bool vitals_enabled = true;
  VitalFeatureSpec vitals;
  TabularEncoderConfig tabular;
  TextEncoderConfig text;
  FusionConfig fusion;
  DecompConfig decomp;
  LossConfig loss;
  TrainConfig train;
  StrategyConfig strategy;
  std::filesystem::path output_dir = "runs";
};

/// Architecture and schedule sizes for a named profile. Formulas are identical across profiles.
inline void apply_profile(ExperimentConfig& c, Profile p) {
  c.profile = p;
  c.train.profile = p;
  SyntheticSpec synth = c.synthetic.value_or(SyntheticSpec{});
  if (p == Profile::paper) {
    c.fusion.d_hidden = 240;
    c.fusion.layers = 4;
    c.fusion.heads = 8;
    c.text.embedding_dim = 240;
    c.text.layers = 4;
    c.text.heads = 8;
    c.train.lr_main = 1e-4;
    c.train.lr_text = 1e-5;
    synth.n_patients = 12430;
  } else {
    c.fusion.d_hidden = 32;
    c.fusion.layers = 2;
    c.fusion.heads = 4;
    c.text.embedding_dim = 32;
    c.text.layers = 2;
    c.text.heads = 4;
    c.train.lr_main = 1e-3;
    c.train.lr_text = 1e-4;
    synth.n_patients = 4000;
  }
  c.train.epochs = 40;
  c.train.batch_size = 128;
  c.train.warmup_fraction = 0.1;
  if (!c.data) c.synthetic = synth;
}

inline ExperimentConfig default_config(Profile p = Profile::desk) {
  ExperimentConfig c;
  apply_profile(c, p);
  return c;
}

// ---- JSON ------------------------------------------------------------------

inline ordered_json to_json(const ChannelFeatureSpec& s) {
  ordered_json stats = ordered_json::array(), thresholds = ordered_json::array();
  for (auto v : s.stats) stats.push_back(to_string(v));
  for (const auto& t : s.thresholds)
    thresholds.push_back({{"value", t.value}, {"direction", t.direction == ThresholdDirection::below ? "below" : "above"}});
  return {{"stats", stats}, {"thresholds", thresholds}};
}

inline ChannelFeatureSpec channel_spec_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"stats", "thresholds"}, where);
  ChannelFeatureSpec s;
  if (j.contains("stats")) {
    s.stats.clear();
    for (const auto& v : j.at("stats")) s.stats.push_back(vital_stat_from_string(v.get<std::string>()));
  }
  if (j.contains("thresholds")) {
    s.thresholds.clear();
    for (const auto& t : j.at("thresholds")) {
      reject_unknown_keys(t, {"value", "direction"}, where + ".thresholds");
      const auto dir = t.value("direction", std::string("below"));
      if (dir != "below" && dir != "above") throw std::invalid_argument(where + ": direction must be below or above");
      s.thresholds.push_back({t.at("value").get<double>(), dir == "below" ? ThresholdDirection::below : ThresholdDirection::above});
    }
  }
  return s;
}

inline ordered_json to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr_main", t.lr_main},
          {"lr_text", t.lr_text},
          {"warmup_fraction", t.warmup_fraction},
          {"weight_decay", t.weight_decay},
          {"betas", {t.beta1, t.beta2}},
          {"adam_eps", t.adam_eps},
          {"grad_clip", t.grad_clip},
          {"eval_every", t.eval_every}};
}

inline void from_json_into(const json& j, TrainConfig& t) {
  reject_unknown_keys(j,
                      {"epochs", "batch_size", "lr_main", "lr_text", "warmup_fraction", "weight_decay", "betas",
                       "adam_eps", "grad_clip", "eval_every"},
                      "train");
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.lr_main = j.value("lr_main", t.lr_main);
  t.lr_text = j.value("lr_text", t.lr_text);
  t.warmup_fraction = j.value("warmup_fraction", t.warmup_fraction);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  if (j.contains("betas")) {
    const auto b = j.at("betas").get<std::vector<double>>();
    if (b.size() != 2) throw std::invalid_argument("train: betas must have two entries");
    t.beta1 = b[0];
    t.beta2 = b[1];
  }
  t.adam_eps = j.value("adam_eps", t.adam_eps);
  t.grad_clip = j.value("grad_clip", t.grad_clip);
  t.eval_every = j.value("eval_every", t.eval_every);
}

inline ordered_json to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["profile"] = to_string(c.profile);
  j["seed"] = c.seed;
  j["seeds"] = c.seeds;
  if (c.data)
    j["data"] = {{"schema", c.data->schema.string()}, {"records", c.data->records.string()}};
  else if (c.synthetic)
    j["synthetic"] = synthetic_spec_to_json(*c.synthetic);
  j["split"] = {{"train_fraction", c.split.train_fraction}, {"stratify_task", c.split.stratify_task}};
  ordered_json channels = ordered_json::object();
  for (const auto& [name, spec] : c.vitals.channels) channels[name] = to_json(spec);
  j["vitals"] = {{"enabled", c.vitals_enabled}, {"channels", channels}, {"fallback", to_json(c.vitals.fallback)}};
  j["tabular"] = to_json(c.tabular);
  j["text"] = to_json(c.text);
  j["fusion"] = to_json(c.fusion);
  j["decomp"] = to_json(c.decomp);
  j["loss"] = to_json(c.loss);
  j["train"] = to_json(c.train);
  j["strategy"] = to_json(c.strategy);
  j["output_dir"] = c.output_dir.string();
  return j;
}

/// Applies the profile preset (from `profile_override`, else the document, else desk),
/// then overlays every block present in the document.
inline ExperimentConfig config_from_json(const json& j, std::optional<Profile> profile_override = std::nullopt) {
  try {
    reject_unknown_keys(j,
                        {"profile", "seed", "seeds", "synthetic", "data", "split", "vitals", "tabular", "text",
                         "fusion", "decomp", "loss", "train", "strategy", "output_dir"},
                        "config");
    if (j.contains("synthetic") && j.contains("data"))
      throw std::invalid_argument("config: 'synthetic' and 'data' are mutually exclusive");
    ExperimentConfig c;
    if (j.contains("data")) {
      const auto& d = j.at("data");
      reject_unknown_keys(d, {"schema", "records"}, "data");
      c.data = DataPaths{d.at("schema").get<std::string>(), d.at("records").get<std::string>()};
    }
    apply_profile(c, profile_override.value_or(profile_from_string(j.value("profile", std::string("desk")))));
    if (j.contains("synthetic")) {
      // Profile-dependent defaults stay unless the document sets them.
      json merged = synthetic_spec_to_json(*c.synthetic);
      const auto& doc = j.at("synthetic");
      if (doc.contains("target_prevalence")) {
        merged.erase("task_names");
        merged.erase("specific_latent_dim");
      }
      for (const auto& [k, v] : doc.items()) merged[k] = v;
      c.synthetic = synthetic_spec_from_json(merged);
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (c.seeds.empty()) throw std::invalid_argument("config: seeds must not be empty");
    if (j.contains("split")) {
      const auto& s = j.at("split");
      reject_unknown_keys(s, {"train_fraction", "stratify_task"}, "split");
      c.split.train_fraction = s.value("train_fraction", c.split.train_fraction);
      c.split.stratify_task = s.value("stratify_task", c.split.stratify_task);
    }
    if (j.contains("vitals")) {
      const auto& v = j.at("vitals");
      reject_unknown_keys(v, {"enabled", "channels", "fallback"}, "vitals");
      c.vitals_enabled = v.value("enabled", c.vitals_enabled);
      if (v.contains("channels"))
        for (const auto& [name, spec] : v.at("channels").items())
          c.vitals.channels.emplace_back(name, channel_spec_from_json(spec, "vitals.channels." + name));
      if (v.contains("fallback")) c.vitals.fallback = channel_spec_from_json(v.at("fallback"), "vitals.fallback");
    }
    if (j.contains("tabular")) from_json_into(j.at("tabular"), c.tabular);
    if (j.contains("text")) from_json_into(j.at("text"), c.text);
    if (j.contains("fusion")) from_json_into(j.at("fusion"), c.fusion);
    if (j.contains("decomp")) from_json_into(j.at("decomp"), c.decomp);
    if (j.contains("loss")) from_json_into(j.at("loss"), c.loss);
    if (j.contains("train")) from_json_into(j.at("train"), c.train);
    if (j.contains("strategy")) from_json_into(j.at("strategy"), c.strategy);
    c.output_dir = j.value("output_dir", c.output_dir.string());
    c.fusion.validate();
    c.loss.validate();
    c.train.validate();
    if (c.synthetic) c.synthetic->validate();
    return c;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path, std::optional<Profile> profile_override = std::nullopt) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j, profile_override);
}

// ---- pipeline --------------------------------------------------------------

struct PreparedData {
  Cohort train;
  Cohort test;
  FeatureScaler scaler;
  Batch train_batch;
  Batch test_batch;
};

/// Cohort (generated or loaded) -> vital features -> stratified split (seeded) -> scaler fit on train.
inline PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  Cohort cohort;
  try {
    if (cfg.data) {
      cohort = load_cohort(cfg.data->records, load_schema(cfg.data->schema));
    } else {
      cohort = generate_synthetic(cfg.synthetic.value_or(SyntheticSpec{})).first;
    }
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (cfg.vitals_enabled) cohort = append_vital_features(cohort, cfg.vitals);
  PreparedData d;
  try {
    std::tie(d.train, d.test) = stratified_split(cohort, cfg.split.train_fraction, cfg.split.stratify_task, seed);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  d.scaler = FeatureScaler::fit(d.train);
  d.train_batch = make_batch(d.train, d.scaler);
  d.test_batch = make_batch(d.test, d.scaler);
  return d;
}

inline ModelSpec model_spec(const ExperimentConfig& cfg, const FeatureSchema& schema, std::uint64_t seed) {
  ModelSpec s;
  s.schema = schema;
  s.tabular = cfg.tabular;
  s.text = cfg.text;
  s.fusion = cfg.fusion;
  s.decomp = cfg.decomp;
  s.strategy = cfg.strategy;
  s.seed = seed;
  return s;
}

inline std::string run_id(const ExperimentConfig& cfg, std::uint64_t seed) {
  return std::string(to_string(cfg.strategy.kind)) + "_seed" + std::to_string(seed);
}

struct RunResult {
  std::filesystem::path dir;
  std::vector<EpochRecord> history;
  EvaluationReport report;
  std::optional<double> final_train_ortho;
};

/// Refuses to reuse an existing run directory unless `overwrite`.
inline void claim_run_dir(const std::filesystem::path& dir, bool overwrite) {
  if (std::filesystem::exists(dir)) {
    if (!overwrite) throw ConfigError("output directory " + dir.string() + " exists (pass --overwrite to replace it)");
    std::filesystem::remove_all(dir);
  }
  std::filesystem::create_directories(dir);
}

/// Trains and evaluates one run into `dir`: config.json, checkpoint.otd,
/// history.jsonl, report.json, roc_task{k}.csv, pr_task{k}.csv.
inline RunResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir,
                                bool overwrite, const PreparedData* shared_data = nullptr) {
  std::optional<PreparedData> own;
  if (!shared_data) own = prepare_data(cfg, seed);
  const PreparedData& data = shared_data ? *shared_data : *own;
  std::unique_ptr<MultiTaskModel<float>> model;
  try {
    model = build_strategy<float>(model_spec(cfg, data.train.schema, seed));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  claim_run_dir(dir, overwrite);
  {
    std::ofstream os(dir / "config.json");
    auto resolved = to_json(cfg);
    resolved["seed"] = seed;
    os << resolved.dump(2) << '\n';
  }
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  Trainer<float> trainer(*model, tc, cfg.loss);
  RunResult result;
  result.dir = dir;
  {
    std::ofstream log(dir / "history.jsonl", std::ios::binary);
    result.history = trainer.fit(data.train_batch, &data.test_batch, &log);
  }
  result.final_train_ortho = result.history.back().ortho;
  save_checkpoint(dir / "checkpoint.otd", *model, data.scaler, &trainer.optimizer());
  result.report = evaluate(*model, data.test_batch);
  write_report(result.report, dir);
  return result;
}

/// Reloads `checkpoint`, evaluates on the run's held-out split, writes the report to `out_dir`.
inline EvaluationReport run_evaluation(const ExperimentConfig& cfg, std::uint64_t seed,
                                      const std::filesystem::path& checkpoint, const std::filesystem::path& out_dir,
                                      bool overwrite) {
  auto loaded = load_checkpoint<float>(checkpoint);
  const auto data = prepare_data(cfg, seed);
  if (loaded.model->spec().schema != data.test.schema)
    throw ConfigError("checkpoint schema does not match the configured cohort");
  const auto test = make_batch(data.test, loaded.scaler);
  auto report = evaluate(*loaded.model, test);
  claim_run_dir(out_dir, overwrite);
  write_report(report, out_dir);
  return report;
}

// ---- ladders and tables ----------------------------------------------------

struct MeanSd {
  double mean = std::nan("");
  double sd = std::nan("");  // sample standard deviation; 0 for one value
  std::size_t n = 0;
};

inline MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd out;
  out.n = v.size();
  if (v.empty()) return out;
  double sum = 0.0;
  for (double x : v) sum += x;
  out.mean = sum / static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - out.mean) * (x - out.mean);
  out.sd = v.size() > 1 ? std::sqrt(sq / static_cast<double>(v.size() - 1)) : 0.0;
  return out;
}

struct TableRow {
  std::string label;  // rung or strategy
  std::uint64_t seed = 0;
  std::optional<double> macro_auc;
  std::optional<double> macro_auprc;
  std::optional<double> macro_brier;
  std::optional<double> train_ortho;  // final-epoch training mean
  std::optional<double> test_ortho;
};

struct SummaryRow {
  std::string label;
  MeanSd auc, auprc, brier, train_ortho, test_ortho;
};

struct ComparisonTable {
  std::vector<TableRow> rows;
  std::vector<SummaryRow> summary;
};

inline std::vector<SummaryRow> summarize(const std::vector<TableRow>& rows, const std::vector<std::string>& labels) {
  std::vector<SummaryRow> out;
  for (const auto& label : labels) {
    std::vector<double> auc, auprc, brier, tr, te;
    for (const auto& r : rows) {
      if (r.label != label) continue;
      if (r.macro_auc) auc.push_back(*r.macro_auc);
      if (r.macro_auprc) auprc.push_back(*r.macro_auprc);
      if (r.macro_brier) brier.push_back(*r.macro_brier);
      if (r.train_ortho) tr.push_back(*r.train_ortho);
      if (r.test_ortho) te.push_back(*r.test_ortho);
    }
    out.push_back({label, mean_sd(auc), mean_sd(auprc), mean_sd(brier), mean_sd(tr), mean_sd(te)});
  }
  return out;
}

inline TableRow table_row(const std::string& label, std::uint64_t seed, const RunResult& r) {
  return {label, seed, r.report.macro_auc, r.report.macro_auprc, r.report.macro_brier, r.final_train_ortho, r.report.ortho};
}

inline void write_table(const ComparisonTable& t, const std::filesystem::path& dir, const std::string& stem) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("NA");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  auto stat = [](const MeanSd& m) {
    if (m.n == 0) return std::string("NA,NA");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", m.mean, m.sd);
    return std::string(buf);
  };
  std::ofstream rows(dir / (stem + "_runs.csv"));
  rows << "label,seed,macro_auc,macro_auprc,macro_brier,train_ortho,test_ortho\n";
  for (const auto& r : t.rows)
    rows << r.label << ',' << r.seed << ',' << cell(r.macro_auc) << ',' << cell(r.macro_auprc) << ','
         << cell(r.macro_brier) << ',' << cell(r.train_ortho) << ',' << cell(r.test_ortho) << '\n';
  std::ofstream summary(dir / (stem + "_summary.csv"));
  summary << "label,seeds,auc_mean,auc_sd,auprc_mean,auprc_sd,brier_mean,brier_sd,train_ortho_mean,train_ortho_sd,"
             "test_ortho_mean,test_ortho_sd\n";
  for (const auto& s : t.summary)
    summary << s.label << ',' << s.auc.n << ',' << stat(s.auc) << ',' << stat(s.auprc) << ',' << stat(s.brier) << ','
            << stat(s.train_ortho) << ',' << stat(s.test_ortho) << '\n';
}

inline void print_summary(const ComparisonTable& t, std::ostream& os) {
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %5s %17s %17s %17s %17s\n", "", "seeds", "macro AUC", "macro AUPRC",
                "macro Brier", "L_ortho (train)");
  os << line;
  for (const auto& s : t.summary) {
    auto fmt = [](const MeanSd& m) {
      char b[32];
      if (m.n == 0) return std::string("n/a");
      std::snprintf(b, sizeof b, "%.4f +- %.4f", m.mean, m.sd);
      return std::string(b);
    };
    std::snprintf(line, sizeof line, "%-14s %5zu %17s %17s %17s %17s\n", s.label.c_str(), s.auc.n, fmt(s.auc).c_str(),
                  fmt(s.auprc).c_str(), fmt(s.brier).c_str(), fmt(s.train_ortho).c_str());
    os << line;
  }
}

enum class Rung { a, b, c, d };
inline constexpr Rung kAllRungs[] = {Rung::a, Rung::b, Rung::c, Rung::d};

inline std::string rung_label(Rung r) {
  static const char* names[] = {"a_mean_pool", "b_global_token", "c_decomp", "d_orthtd"};
  return names[static_cast<int>(r)];
}

/// Configuration for one ablation rung; the orthogonality weight of rung (d)
/// is the configured lambda_ortho.
inline ExperimentConfig rung_config(ExperimentConfig cfg, Rung r) {
  switch (r) {
    case Rung::a:
      cfg.fusion.use_global_token = false;
      cfg.strategy.kind = Strategy::hard_sharing;
      break;
    case Rung::b:
      cfg.fusion.use_global_token = true;
      cfg.strategy.kind = Strategy::hard_sharing;
      break;
    case Rung::c:
      cfg.fusion.use_global_token = true;
      cfg.strategy.kind = Strategy::orthtd;
      cfg.loss.lambda_ortho = 0.0;
      break;
    case Rung::d:
      cfg.fusion.use_global_token = true;
      cfg.strategy.kind = Strategy::orthtd;
      break;
  }
  return cfg;
}

/// Per-run progress callback: label, seed, result.
using RunCallback = std::function<void(const std::string&, std::uint64_t, const RunResult&)>;

inline ComparisonTable run_ablation(const ExperimentConfig& cfg, const std::filesystem::path& dir, bool overwrite,
                                    const std::vector<Rung>& rungs = {std::begin(kAllRungs), std::end(kAllRungs)},
                                    const RunCallback& progress = {}) {
  claim_run_dir(dir, overwrite);
  ComparisonTable table;
  std::vector<std::string> labels;
  for (auto r : rungs) labels.push_back(rung_label(r));
  for (auto seed : cfg.seeds) {
    const auto data = prepare_data(cfg, seed);
    for (auto r : rungs) {
      const auto label = rung_label(r);
      const auto result = run_experiment(rung_config(cfg, r), seed, dir / (label + "_seed" + std::to_string(seed)), false, &data);
      table.rows.push_back(table_row(label, seed, result));
      if (progress) progress(label, seed, result);
    }
  }
  table.summary = summarize(table.rows, labels);
  write_table(table, dir, "ablation");
  return table;
}

inline ComparisonTable run_compare(const ExperimentConfig& cfg, const std::filesystem::path& dir, bool overwrite,
                                   const std::vector<Strategy>& strategies = {std::begin(kAllStrategies), std::end(kAllStrategies)},
                                   const RunCallback& progress = {}) {
  claim_run_dir(dir, overwrite);
  ComparisonTable table;
  std::vector<std::string> labels;
  for (auto s : strategies) labels.push_back(to_string(s));
  for (auto seed : cfg.seeds) {
    const auto data = prepare_data(cfg, seed);
    for (auto s : strategies) {
      auto run_cfg = cfg;
      run_cfg.strategy.kind = s;
      const auto result = run_experiment(run_cfg, seed, dir / run_id(run_cfg, seed), false, &data);
      table.rows.push_back(table_row(to_string(s), seed, result));
      if (progress) progress(to_string(s), seed, result);
    }
  }
  table.summary = summarize(table.rows, labels);
  write_table(table, dir, "compare");
  return table;
}

}  // namespace orthtd
