// Dense model inputs assembled from patient records.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "orthtd/data/cohort.hpp"

namespace orthtd {

/// Per-feature standardization of continuous inputs, fit on observed values
/// of a training cohort. Missing entries stay 0.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> scale;

  bool operator==(const FeatureScaler&) const = default;

  static FeatureScaler fit(const Cohort& cohort) {
    const std::size_t m = cohort.schema.continuous.size();
    FeatureScaler s;
    s.mean.assign(m, 0.0);
    s.scale.assign(m, 1.0);
    for (std::size_t j = 0; j < m; ++j) {
      double sum = 0.0, sq = 0.0;
      std::size_t count = 0;
      for (const auto& r : cohort.records) {
        if (r.continuous_missing[j]) continue;
        sum += r.continuous[j];
        ++count;
      }
      if (count == 0) continue;
      s.mean[j] = sum / static_cast<double>(count);
      for (const auto& r : cohort.records)
        if (!r.continuous_missing[j]) sq += (r.continuous[j] - s.mean[j]) * (r.continuous[j] - s.mean[j]);
      const double sd = std::sqrt(sq / static_cast<double>(count));
      s.scale[j] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }

  static FeatureScaler identity(std::size_t m) { return {std::vector<double>(m, 0.0), std::vector<double>(m, 1.0)}; }
};

struct Batch {
  std::size_t size = 0;
  std::size_t n_categorical = 0;
  std::size_t n_continuous = 0;
  std::size_t n_tasks = 0;
  std::vector<int> categorical;        // [B x C]
  std::vector<double> continuous;      // [B x M], standardized, 0 where missing
  std::vector<double> missing;         // [B x M], 1 where missing
  std::vector<std::size_t> text_len;   // per field: CLS + max_tokens
  std::vector<std::vector<int>> text;  // per field: [B x text_len]
  std::vector<std::vector<std::uint8_t>> text_valid;
  std::vector<std::uint8_t> labels;   // [B x K]
  std::vector<std::uint8_t> present;  // [B x K]
  std::vector<std::uint64_t> ids;

  std::uint8_t label(std::size_t row, std::size_t task) const { return labels[row * n_tasks + task]; }
  bool has_label(std::size_t row, std::size_t task) const { return present[row * n_tasks + task] != 0; }
};

/// Builds the model input for all records: CLS-prefixed, right-padded,
/// tail-truncated token rows and scaled continuous values with masks.
inline Batch make_batch(const Cohort& cohort, const FeatureScaler& scaler) {
  const auto& schema = cohort.schema;
  Batch b;
  b.size = cohort.records.size();
  b.n_categorical = schema.categorical.size();
  b.n_continuous = schema.continuous.size();
  b.n_tasks = schema.task_count();
  if (scaler.mean.size() != b.n_continuous)
    throw std::invalid_argument("make_batch: scaler fitted on " + std::to_string(scaler.mean.size()) +
                                " continuous features, schema has " + std::to_string(b.n_continuous));
  for (const auto& f : schema.text) b.text_len.push_back(f.max_tokens + 1);
  b.text.resize(schema.text.size());
  b.text_valid.resize(schema.text.size());
  for (const auto& r : cohort.records) {
    b.ids.push_back(r.id);
    b.categorical.insert(b.categorical.end(), r.categorical.begin(), r.categorical.end());
    for (std::size_t j = 0; j < b.n_continuous; ++j) {
      const bool miss = r.continuous_missing[j] != 0;
      b.continuous.push_back(miss ? 0.0 : (r.continuous[j] - scaler.mean[j]) / scaler.scale[j]);
      b.missing.push_back(miss ? 1.0 : 0.0);
    }
    for (std::size_t f = 0; f < schema.text.size(); ++f) {
      const std::size_t len = b.text_len[f];
      const auto& tokens = r.text[f];
      b.text[f].push_back(kClsToken);
      b.text_valid[f].push_back(1);
      for (std::size_t t = 1; t < len; ++t) {
        const bool have = t - 1 < tokens.size();
        b.text[f].push_back(have ? tokens[t - 1] : kPadToken);
        b.text_valid[f].push_back(have ? 1 : 0);
      }
    }
    for (std::size_t k = 0; k < b.n_tasks; ++k) {
      b.labels.push_back(r.labels[k]);
      b.present.push_back(r.label_present[k]);
    }
  }
  return b;
}

/// Rows of `all` selected by index, in the given order.
inline Batch select_rows(const Batch& all, std::span<const std::size_t> rows) {
  Batch b;
  b.size = rows.size();
  b.n_categorical = all.n_categorical;
  b.n_continuous = all.n_continuous;
  b.n_tasks = all.n_tasks;
  b.text_len = all.text_len;
  b.text.resize(all.text.size());
  b.text_valid.resize(all.text.size());
  auto copy = [](const auto& src, auto& dst, std::size_t row, std::size_t width) {
    dst.insert(dst.end(), src.begin() + static_cast<std::ptrdiff_t>(row * width),
               src.begin() + static_cast<std::ptrdiff_t>((row + 1) * width));
  };
  for (std::size_t r : rows) {
    if (r >= all.size) throw std::out_of_range("select_rows: row index out of range");
    b.ids.push_back(all.ids[r]);
    copy(all.categorical, b.categorical, r, all.n_categorical);
    copy(all.continuous, b.continuous, r, all.n_continuous);
    copy(all.missing, b.missing, r, all.n_continuous);
    for (std::size_t f = 0; f < all.text.size(); ++f) {
      copy(all.text[f], b.text[f], r, all.text_len[f]);
      copy(all.text_valid[f], b.text_valid[f], r, all.text_len[f]);
    }
    copy(all.labels, b.labels, r, all.n_tasks);
    copy(all.present, b.present, r, all.n_tasks);
  }
  return b;
}

}  // namespace orthtd
