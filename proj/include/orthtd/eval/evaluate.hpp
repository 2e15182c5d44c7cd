// Per-task evaluation of a trained model and report/curve export.
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "orthtd/eval/metrics.hpp"
#include "orthtd/model/strategies.hpp"

namespace orthtd {

struct TaskReport {
  std::string name;
  std::size_t n = 0;          // labeled records
  std::size_t positives = 0;
  std::optional<double> auc;  // undefined without both classes
  std::optional<double> auprc;
  std::optional<double> brier;
  Curves curves;

  bool operator==(const TaskReport& o) const {
    auto same = [](const std::vector<CurvePoint>& a, const std::vector<CurvePoint>& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].x != b[i].x || a[i].y != b[i].y) return false;
      return true;
    };
    return name == o.name && n == o.n && positives == o.positives && auc == o.auc && auprc == o.auprc &&
           brier == o.brier && same(curves.roc, o.curves.roc) && same(curves.pr, o.curves.pr);
  }
};

struct EvaluationReport {
  std::vector<TaskReport> tasks;
  // Unweighted means over tasks where the metric is defined.
  std::optional<double> macro_auc;
  std::optional<double> macro_auprc;
  std::optional<double> macro_brier;
  std::optional<double> ortho;  // mean L_ortho over the evaluated records, when the strategy decomposes

  bool operator==(const EvaluationReport&) const = default;
};

/// Model probabilities for every record, one vector per task.
template <typename T>
std::vector<std::vector<double>> predict(const MultiTaskModel<T>& model, const Batch& data, std::size_t chunk = 512,
                                         std::optional<double>* ortho = nullptr) {
  NoGradGuard no_grad;
  std::vector<std::vector<double>> probs(model.tasks());
  double ortho_sum = 0.0;
  bool have_ortho = false;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size; start += chunk) {
    rows.clear();
    for (std::size_t r = start; r < std::min(data.size, start + chunk); ++r) rows.push_back(r);
    const auto out = model.forward(select_rows(data, rows));
    for (std::size_t k = 0; k < probs.size(); ++k)
      for (T p : out.probabilities[k].data()) probs[k].push_back(static_cast<double>(p));
    if (out.ortho) {
      have_ortho = true;
      ortho_sum += static_cast<double>(out.ortho->item()) * static_cast<double>(rows.size());
    }
  }
  if (ortho) *ortho = have_ortho && data.size ? std::optional<double>(ortho_sum / static_cast<double>(data.size)) : std::nullopt;
  return probs;
}

namespace detail {

inline std::optional<double> mean_defined(const std::vector<TaskReport>& tasks,
                                          std::optional<double> TaskReport::*field) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& t : tasks)
    if (t.*field) {
      sum += *(t.*field);
      ++count;
    }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

}  // namespace detail

/// Metrics from precomputed probabilities, honoring per-task label presence.
inline EvaluationReport evaluate_predictions(const std::vector<std::vector<double>>& probs, const Batch& data,
                                             const std::vector<std::string>& task_names) {
  EvaluationReport report;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    TaskReport t;
    t.name = k < task_names.size() ? task_names[k] : "task" + std::to_string(k + 1);
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (std::size_t r = 0; r < data.size; ++r) {
      if (!data.has_label(r, k)) continue;
      scores.push_back(probs[k][r]);
      labels.push_back(data.label(r, k));
    }
    t.n = scores.size();
    t.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
    if (t.n > 0) t.brier = brier(scores, labels);
    if (t.positives > 0) t.auprc = auprc(scores, labels);
    if (t.positives > 0 && t.positives < t.n) {
      t.auc = auc(scores, labels);
      t.curves = curves(scores, labels);
    }
    report.tasks.push_back(std::move(t));
  }
  report.macro_auc = detail::mean_defined(report.tasks, &TaskReport::auc);
  report.macro_auprc = detail::mean_defined(report.tasks, &TaskReport::auprc);
  report.macro_brier = detail::mean_defined(report.tasks, &TaskReport::brier);
  return report;
}

template <typename T>
EvaluationReport evaluate(const MultiTaskModel<T>& model, const Batch& data) {
  std::optional<double> ortho;
  const auto probs = predict(model, data, 512, &ortho);
  auto report = evaluate_predictions(probs, data, model.spec().schema.tasks);
  report.ortho = ortho;
  return report;
}

inline nlohmann::ordered_json report_to_json(const EvaluationReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); };
  nlohmann::ordered_json j;
  j["tasks"] = nlohmann::ordered_json::array();
  for (const auto& t : r.tasks) {
    nlohmann::ordered_json tj;
    tj["name"] = t.name;
    tj["n"] = t.n;
    tj["positives"] = t.positives;
    tj["auc"] = opt(t.auc);
    tj["auprc"] = opt(t.auprc);
    tj["brier"] = opt(t.brier);
    j["tasks"].push_back(tj);
  }
  j["macro"] = {{"auc", opt(r.macro_auc)}, {"auprc", opt(r.macro_auprc)}, {"brier", opt(r.macro_brier)}};
  j["ortho"] = opt(r.ortho);
  return j;
}

namespace detail {

inline void write_curve(const std::filesystem::path& path, const char* header, const std::vector<CurvePoint>& pts) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << header << '\n';
  char line[96];
  for (const auto& p : pts) {
    std::snprintf(line, sizeof line, "%.17g,%.17g\n", p.x, p.y);
    os << line;
  }
}

}  // namespace detail

/// report.json plus roc_task{k}.csv and pr_task{k}.csv (k from 1) in `dir`.
/// Tasks without both classes get header-only curve files.
inline void write_report(const EvaluationReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "report.json", std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (dir / "report.json").string());
    os << report_to_json(r).dump(2) << '\n';
  }
  for (std::size_t k = 0; k < r.tasks.size(); ++k) {
    const auto id = std::to_string(k + 1);
    detail::write_curve(dir / ("roc_task" + id + ".csv"), "fpr,tpr", r.tasks[k].curves.roc);
    detail::write_curve(dir / ("pr_task" + id + ".csv"), "recall,precision", r.tasks[k].curves.pr);
  }
}

}  // namespace orthtd
