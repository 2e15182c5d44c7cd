// Fixed-epoch mini-batch training loop with a line-delimited history log.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "orthtd/eval/evaluate.hpp"
#include "orthtd/model/strategies.hpp"
#include "orthtd/train/optimizer.hpp"

namespace orthtd {

enum class Profile { paper, desk };

inline const char* to_string(Profile p) { return p == Profile::paper ? "paper" : "desk"; }

inline Profile profile_from_string(const std::string& s) {
  if (s == "paper") return Profile::paper;
  if (s == "desk") return Profile::desk;
  throw std::invalid_argument("unknown profile '" + s + "' (expected paper or desk)");
}

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 128;
  double lr_main = 1e-4;
  double lr_text = 1e-5;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  double grad_clip = 0.0;  // stub: only 0 (off) is accepted
  // Evaluate the held-out fold every this many epochs (0: never).
  std::size_t eval_every = 1;
  Profile profile = Profile::desk;

  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    if (epochs == 0 || batch_size == 0) throw std::invalid_argument("train: epochs and batch_size must be positive");
    if (!(lr_main > 0 && lr_text > 0)) throw std::invalid_argument("train: learning rates must be positive");
    if (!(warmup_fraction >= 0 && warmup_fraction < 1)) throw std::invalid_argument("train: warmup_fraction must lie in [0, 1)");
    if (weight_decay < 0) throw std::invalid_argument("train: weight_decay must be nonnegative");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("train: betas must lie in [0, 1)");
    if (!(adam_eps > 0)) throw std::invalid_argument("train: adam_eps must be positive");
    if (grad_clip != 0.0) throw std::invalid_argument("train: gradient clipping is not supported (grad_clip must be 0)");
  }

  AdamWConfig optimizer() const { return {lr_main, lr_text, weight_decay, beta1, beta2, adam_eps}; }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean objective over the epoch's batches
  std::optional<double> ortho;  // mean L_ortho over the epoch's batches
  double lr_multiplier = 0.0;   // schedule value at the epoch's last step
  std::optional<double> heldout_macro_auc;
  std::optional<double> heldout_macro_auprc;
  std::optional<double> heldout_ortho;

  bool operator==(const EpochRecord&) const = default;
};

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); };
  return {{"epoch", r.epoch},
          {"loss", r.loss},
          {"ortho", opt(r.ortho)},
          {"lr_multiplier", r.lr_multiplier},
          {"heldout_macro_auc", opt(r.heldout_macro_auc)},
          {"heldout_macro_auprc", opt(r.heldout_macro_auprc)},
          {"heldout_ortho", opt(r.heldout_ortho)}};
}

template <typename T>
class Trainer {
 public:
  Trainer(MultiTaskModel<T>& model, TrainConfig config, LossConfig loss)
      : model_(model), config_((config.validate(), config)), loss_((loss.validate(), loss)),
        optimizer_(model.parameters(), config_.optimizer()), shuffle_rng_(config_.seed),
        dropout_rng_(config_.seed ^ 0x9e3779b97f4a7c15ULL) {}

  /// Runs all epochs. Each history record is also written to `log` as one JSON line.
  std::vector<EpochRecord> fit(const Batch& train, const Batch* heldout = nullptr, std::ostream* log = nullptr) {
    if (train.size == 0) throw std::invalid_argument("train: empty training cohort");
    const std::size_t per_epoch = (train.size + config_.batch_size - 1) / config_.batch_size;
    const std::size_t total = per_epoch * config_.epochs;
    std::vector<std::size_t> order(train.size);
    std::vector<EpochRecord> history;
    for (std::size_t epoch = 1; epoch <= config_.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), shuffle_rng_);
      EpochRecord rec;
      rec.epoch = epoch;
      double loss_sum = 0.0, ortho_sum = 0.0;
      std::size_t ortho_count = 0;
      for (std::size_t b = 0; b < per_epoch; ++b) {
        const std::size_t begin = b * config_.batch_size;
        const std::size_t end = std::min(train.size, begin + config_.batch_size);
        const auto batch = select_rows(train, std::span<const std::size_t>(order.data() + begin, end - begin));
        const auto out = model_.forward(batch, &dropout_rng_);
        auto objective = model_.objective(out, batch, loss_);
        const double value = static_cast<double>(objective.item());
        if (!std::isfinite(value))
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
        model_.parameters().zero_grad();
        if (objective.requires_grad()) objective.backward();
        rec.lr_multiplier = cosine_lr(optimizer_.steps(), total, config_.warmup_fraction);
        optimizer_.step(rec.lr_multiplier);
        loss_sum += value;
        if (out.ortho) {
          ortho_sum += static_cast<double>(out.ortho->item());
          ++ortho_count;
        }
      }
      rec.loss = loss_sum / static_cast<double>(per_epoch);
      if (ortho_count) rec.ortho = ortho_sum / static_cast<double>(ortho_count);
      if (heldout && config_.eval_every && (epoch % config_.eval_every == 0 || epoch == config_.epochs)) {
        const auto report = evaluate(model_, *heldout);
        rec.heldout_macro_auc = report.macro_auc;
        rec.heldout_macro_auprc = report.macro_auprc;
        rec.heldout_ortho = report.ortho;
      }
      if (log) *log << to_json(rec).dump() << '\n';
      history.push_back(rec);
    }
    return history;
  }

  AdamW<T>& optimizer() { return optimizer_; }
  const TrainConfig& config() const { return config_; }

 private:
  MultiTaskModel<T>& model_;
  TrainConfig config_;
  LossConfig loss_;
  AdamW<T> optimizer_;
  std::mt19937_64 shuffle_rng_;
  std::mt19937_64 dropout_rng_;
};

/// One-shot convenience over Trainer.
template <typename T>
std::vector<EpochRecord> train(MultiTaskModel<T>& model, const Batch& data, const TrainConfig& config,
                               const LossConfig& loss, const Batch* heldout = nullptr, std::ostream* log = nullptr) {
  Trainer<T> trainer(model, config, loss);
  return trainer.fit(data, heldout, log);
}

}  // namespace orthtd
