#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "orthtd/data/cohort.hpp"

namespace orthtd {

inline constexpr double kDefaultTrainFraction = 0.7;

/// Train/test split stratified on one task's label. Each label class (and the
/// unlabeled stratum, if any) contributes round(count * train_fraction)
/// records to train. Both halves keep the input's record order.
inline std::pair<Cohort, Cohort> stratified_split(const Cohort& cohort, double train_fraction = kDefaultTrainFraction,
                                                  std::size_t stratify_task = 0, std::uint64_t seed = 0) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("stratified_split: train_fraction must lie in (0, 1)");
  if (stratify_task >= cohort.schema.task_count())
    throw std::invalid_argument("stratified_split: stratify task index out of range");

  std::vector<std::size_t> strata[3];  // negatives, positives, unlabeled
  for (std::size_t i = 0; i < cohort.records.size(); ++i) {
    const auto& r = cohort.records[i];
    strata[r.has_label(stratify_task) ? r.labels[stratify_task] : 2].push_back(i);
  }
  const auto& task = cohort.schema.tasks[stratify_task];
  if (strata[0].empty()) throw std::invalid_argument("stratified_split: task '" + task + "' has no negatives");
  if (strata[1].empty()) throw std::invalid_argument("stratified_split: task '" + task + "' has no positives");

  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> in_train(cohort.records.size(), 0);
  for (auto& stratum : strata) {
    std::shuffle(stratum.begin(), stratum.end(), rng);
    const auto take = static_cast<std::size_t>(std::llround(static_cast<double>(stratum.size()) * train_fraction));
    for (std::size_t i = 0; i < take; ++i) in_train[stratum[i]] = 1;
  }

  Cohort train{cohort.schema, {}, cohort.provenance};
  Cohort test{cohort.schema, {}, cohort.provenance};
  for (std::size_t i = 0; i < cohort.records.size(); ++i)
    (in_train[i] ? train : test).records.push_back(cohort.records[i]);
  return {std::move(train), std::move(test)};
}

}  // namespace orthtd
