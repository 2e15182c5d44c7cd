// Discrimination and calibration metrics for binary scores.
//
// Ties: AUC gives tied positive/negative pairs half credit; in precision-
// recall terms, records sharing a score enter the same cut.
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace orthtd {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
};

namespace detail {

inline void check_inputs(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw MetricError("metric: scores and labels differ in length");
  for (auto y : labels)
    if (y > 1) throw MetricError("metric: labels must be 0 or 1");
}

/// Cumulative (tp, fp) at the end of each tie group, scores descending.
struct Cut {
  std::size_t tp = 0;
  std::size_t fp = 0;
};

inline std::vector<Cut> descending_cuts(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<Cut> cuts;
  Cut c;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (labels[order[i]] ? c.tp : c.fp)++;
    if (i + 1 == order.size() || scores[order[i + 1]] != scores[order[i]]) cuts.push_back(c);
  }
  return cuts;
}

}  // namespace detail

/// Mann-Whitney AUC via midranks, O(n log n).
inline double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  detail::check_inputs(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]]) {
        positive_rank_sum += midrank;
        ++positives;
      }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw MetricError("auc: needs at least one positive and one negative");
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

/// Average precision: sum over descending-score cuts of precision * recall increment.
inline double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  detail::check_inputs(scores, labels);
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  if (positives == 0) throw MetricError("auprc: needs at least one positive");
  const double total_pos = static_cast<double>(positives);
  double ap = 0.0;
  std::size_t prev_tp = 0;
  for (const auto& c : detail::descending_cuts(scores, labels)) {
    const double precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    ap += precision * (static_cast<double>(c.tp - prev_tp) / total_pos);
    prev_tp = c.tp;
  }
  return ap;
}

inline double brier(std::span<const double> probs, std::span<const std::uint8_t> labels) {
  detail::check_inputs(probs, labels);
  if (probs.empty()) throw MetricError("brier: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) throw MetricError("brier: probabilities must lie in [0, 1]");
    const double d = probs[i] - labels[i];
    total += d * d;
  }
  return total / static_cast<double>(probs.size());
}

struct Curves {
  std::vector<CurvePoint> roc;  // (FPR, TPR), anchored at (0, 0) and (1, 1)
  std::vector<CurvePoint> pr;   // (recall, precision), one per cut
};

/// One point per distinct score threshold. ROC needs both classes; PR is empty without positives.
inline Curves curves(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  detail::check_inputs(scores, labels);
  const auto cuts = detail::descending_cuts(scores, labels);
  const auto positives = cuts.empty() ? 0 : cuts.back().tp;
  const auto negatives = cuts.empty() ? 0 : cuts.back().fp;
  if (positives == 0 || negatives == 0) throw MetricError("curves: ROC needs both classes");
  Curves out;
  out.roc.push_back({0.0, 0.0});
  for (const auto& c : cuts) {
    out.roc.push_back({static_cast<double>(c.fp) / static_cast<double>(negatives),
                       static_cast<double>(c.tp) / static_cast<double>(positives)});
    out.pr.push_back({static_cast<double>(c.tp) / static_cast<double>(positives),
                      static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp)});
  }
  return out;
}

/// Trapezoidal area under a polyline.
inline double trapezoid_area(std::span<const CurvePoint> points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += (points[i].x - points[i - 1].x) * (points[i].y + points[i - 1].y) / 2.0;
  return area;
}

}  // namespace orthtd
