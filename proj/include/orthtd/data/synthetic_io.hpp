#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include "orthtd/data/cohort_io.hpp"
#include "orthtd/data/synthetic.hpp"

namespace orthtd {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw std::invalid_argument(where + ": unknown key '" + key + "'");
}

inline SyntheticSpec synthetic_spec_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"n_patients", "shared_latent_dim", "specific_latent_dim", "target_prevalence", "task_names",
                       "shared_signal_weight", "specific_signal_weight", "feature_noise_std", "vocab_size", "seed",
                       "n_continuous", "categorical_cardinalities", "text_max_tokens", "missing_rate", "any_as_or"},
                      "synthetic");
  SyntheticSpec s;
  s.n_patients = j.value("n_patients", s.n_patients);
  s.shared_latent_dim = j.value("shared_latent_dim", s.shared_latent_dim);
  s.target_prevalence = j.value("target_prevalence", s.target_prevalence);
  if (j.contains("task_names")) {
    s.task_names = j.at("task_names").get<std::vector<std::string>>();
  } else if (s.task_names.size() != s.target_prevalence.size()) {
    s.task_names.clear();
    for (std::size_t k = 0; k < s.target_prevalence.size(); ++k) s.task_names.push_back("task_" + std::to_string(k + 1));
  }
  if (j.contains("specific_latent_dim")) {
    const auto& t = j.at("specific_latent_dim");
    if (t.is_array())
      s.specific_latent_dims = t.get<std::vector<std::size_t>>();
    else
      s.specific_latent_dims.assign(s.target_prevalence.size(), t.get<std::size_t>());
  } else {
    s.specific_latent_dims.resize(s.target_prevalence.size(), 2);
  }
  s.shared_signal_weight = j.value("shared_signal_weight", s.shared_signal_weight);
  s.specific_signal_weight = j.value("specific_signal_weight", s.specific_signal_weight);
  s.feature_noise_std = j.value("feature_noise_std", s.feature_noise_std);
  s.vocab_size = j.value("vocab_size", s.vocab_size);
  s.seed = j.value("seed", s.seed);
  s.n_continuous = j.value("n_continuous", s.n_continuous);
  s.categorical_cardinalities = j.value("categorical_cardinalities", s.categorical_cardinalities);
  s.text_max_tokens = j.value("text_max_tokens", s.text_max_tokens);
  s.missing_rate = j.value("missing_rate", s.missing_rate);
  s.any_as_or = j.value("any_as_or", s.any_as_or);
  s.validate();
  return s;
}

inline ordered_json synthetic_spec_to_json(const SyntheticSpec& s) {
  ordered_json j;
  j["n_patients"] = s.n_patients;
  j["shared_latent_dim"] = s.shared_latent_dim;
  j["specific_latent_dim"] = s.specific_latent_dims;
  j["target_prevalence"] = s.target_prevalence;
  j["task_names"] = s.task_names;
  j["shared_signal_weight"] = s.shared_signal_weight;
  j["specific_signal_weight"] = s.specific_signal_weight;
  j["feature_noise_std"] = s.feature_noise_std;
  j["vocab_size"] = s.vocab_size;
  j["seed"] = s.seed;
  j["n_continuous"] = s.n_continuous;
  j["categorical_cardinalities"] = s.categorical_cardinalities;
  j["text_max_tokens"] = s.text_max_tokens;
  j["missing_rate"] = s.missing_rate;
  j["any_as_or"] = s.any_as_or;
  return j;
}

/// First line carries the per-task loadings and intercepts; one line per patient follows.
inline void write_latents(const GroundTruthLatents& truth, const Cohort& cohort, std::ostream& out) {
  ordered_json header;
  header["intercepts"] = truth.intercepts;
  header["shared_loadings"] = truth.shared_loadings;
  header["specific_loadings"] = truth.specific_loadings;
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < truth.shared.size(); ++i) {
    ordered_json line;
    line["id"] = cohort.records.at(i).id;
    line["z_shared"] = truth.shared[i];
    line["z_specific"] = truth.specific[i];
    out << line.dump() << '\n';
  }
}

inline void write_latents(const GroundTruthLatents& truth, const Cohort& cohort, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write latents file " + path.string());
  write_latents(truth, cohort, out);
}

}  // namespace orthtd
