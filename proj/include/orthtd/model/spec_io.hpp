// JSON form of model configuration blocks. Readers start from the current
// value, so absent keys keep their defaults; unknown keys are rejected.
#pragma once

#include "orthtd/data/synthetic_io.hpp"
#include "orthtd/model/losses.hpp"
#include "orthtd/model/strategies.hpp"

namespace orthtd {

inline ordered_json to_json(const TabularEncoderConfig& c) { return {{"embedding_dim", c.embedding_dim}}; }

inline void from_json_into(const json& j, TabularEncoderConfig& c) {
  reject_unknown_keys(j, {"embedding_dim"}, "tabular");
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
}

inline ordered_json to_json(const TextEncoderConfig& c) {
  return {{"embedding_dim", c.embedding_dim}, {"layers", c.layers}, {"heads", c.heads}, {"shared_weights", c.shared_weights}};
}

inline void from_json_into(const json& j, TextEncoderConfig& c) {
  reject_unknown_keys(j, {"embedding_dim", "layers", "heads", "shared_weights"}, "text");
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.shared_weights = j.value("shared_weights", c.shared_weights);
}

inline ordered_json to_json(const FusionConfig& c) {
  return {{"d_hidden", c.d_hidden}, {"layers", c.layers}, {"heads", c.heads}, {"dropout", c.dropout},
          {"use_global_token", c.use_global_token}};
}

inline void from_json_into(const json& j, FusionConfig& c) {
  reject_unknown_keys(j, {"d_hidden", "layers", "heads", "dropout", "use_global_token"}, "fusion");
  c.d_hidden = j.value("d_hidden", c.d_hidden);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.dropout = j.value("dropout", c.dropout);
  c.use_global_token = j.value("use_global_token", c.use_global_token);
}

inline ordered_json to_json(const DecompConfig& c) {
  return {{"shared_ratio", c.shared_ratio}, {"task_dim", c.task_dim}, {"head_hidden", c.head_hidden},
          {"orthogonality", c.orthogonality}, {"flattened_cosine", c.flattened_cosine}};
}

inline void from_json_into(const json& j, DecompConfig& c) {
  reject_unknown_keys(j, {"shared_ratio", "task_dim", "head_hidden", "orthogonality", "flattened_cosine"}, "decomp");
  c.shared_ratio = j.value("shared_ratio", c.shared_ratio);
  c.task_dim = j.value("task_dim", c.task_dim);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.orthogonality = j.value("orthogonality", c.orthogonality);
  c.flattened_cosine = j.value("flattened_cosine", c.flattened_cosine);
}

inline ordered_json to_json(const StrategyConfig& c) {
  return {{"kind", to_string(c.kind)}, {"experts", c.experts}, {"stitch_diagonal", c.stitch_diagonal},
          {"single_task_plain_head", c.single_task_plain_head}};
}

inline void from_json_into(const json& j, StrategyConfig& c) {
  reject_unknown_keys(j, {"kind", "experts", "stitch_diagonal", "single_task_plain_head"}, "strategy");
  if (j.contains("kind")) c.kind = strategy_from_string(j.at("kind").get<std::string>());
  c.experts = j.value("experts", c.experts);
  c.stitch_diagonal = j.value("stitch_diagonal", c.stitch_diagonal);
  c.single_task_plain_head = j.value("single_task_plain_head", c.single_task_plain_head);
}

inline ordered_json to_json(const LossConfig& c) {
  return {{"gamma_pos", c.gamma_pos}, {"gamma_neg", c.gamma_neg}, {"margin", c.margin},
          {"lambda_ortho", c.lambda_ortho}, {"clamp_eps", c.clamp_eps}};
}

inline void from_json_into(const json& j, LossConfig& c) {
  reject_unknown_keys(j, {"gamma_pos", "gamma_neg", "margin", "lambda_ortho", "clamp_eps"}, "loss");
  c.gamma_pos = j.value("gamma_pos", c.gamma_pos);
  c.gamma_neg = j.value("gamma_neg", c.gamma_neg);
  c.margin = j.value("margin", c.margin);
  c.lambda_ortho = j.value("lambda_ortho", c.lambda_ortho);
  c.clamp_eps = j.value("clamp_eps", c.clamp_eps);
}

inline ordered_json to_json(const ModelSpec& s) {
  return {{"schema", schema_to_json(s.schema)}, {"tabular", to_json(s.tabular)}, {"text", to_json(s.text)},
          {"fusion", to_json(s.fusion)},        {"decomp", to_json(s.decomp)},   {"strategy", to_json(s.strategy)},
          {"seed", s.seed}};
}

inline ModelSpec model_spec_from_json(const json& j) {
  reject_unknown_keys(j, {"schema", "tabular", "text", "fusion", "decomp", "strategy", "seed"}, "model");
  ModelSpec s;
  s.schema = schema_from_json(j.at("schema"));
  if (j.contains("tabular")) from_json_into(j.at("tabular"), s.tabular);
  if (j.contains("text")) from_json_into(j.at("text"), s.text);
  if (j.contains("fusion")) from_json_into(j.at("fusion"), s.fusion);
  if (j.contains("decomp")) from_json_into(j.at("decomp"), s.decomp);
  if (j.contains("strategy")) from_json_into(j.at("strategy"), s.strategy);
  s.seed = j.value("seed", s.seed);
  return s;
}

}  // namespace orthtd
