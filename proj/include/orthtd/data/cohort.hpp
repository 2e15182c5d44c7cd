// Multimodal patient data model: schema, records, and cohort validation.
#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace orthtd {

struct CategoricalFeature {
  std::string name;
  int cardinality = 2;
  bool operator==(const CategoricalFeature&) const = default;
};

struct TextField {
  std::string name;
  std::size_t max_tokens = 1;
  bool operator==(const TextField&) const = default;
};

struct VitalChannel {
  std::string name;
  std::string unit;
  bool operator==(const VitalChannel&) const = default;
};

/// Reserved text token ids.
inline constexpr int kClsToken = 0;
inline constexpr int kPadToken = 1;

struct FeatureSchema {
  std::vector<CategoricalFeature> categorical;
  std::vector<std::string> continuous;
  std::vector<TextField> text;
  std::vector<VitalChannel> vitals;
  std::vector<std::string> tasks;
  int vocab_size = 2;

  bool operator==(const FeatureSchema&) const = default;

  std::size_t task_count() const { return tasks.size(); }

  void validate() const {
    if (tasks.empty()) throw std::invalid_argument("schema: at least one task is required");
    if (vocab_size < 2) throw std::invalid_argument("schema: vocab_size must be at least 2");
    std::set<std::string> names{"id"};
    auto claim = [&](const std::string& name) {
      if (name.empty()) throw std::invalid_argument("schema: empty feature name");
      if (!names.insert(name).second) throw std::invalid_argument("schema: duplicate or reserved name '" + name + "'");
    };
    for (const auto& c : categorical) {
      claim(c.name);
      if (c.cardinality < 2)
        throw std::invalid_argument("schema: categorical '" + c.name + "' needs cardinality >= 2");
    }
    for (const auto& c : continuous) claim(c);
    for (const auto& t : text) {
      claim(t.name);
      if (t.max_tokens < 1) throw std::invalid_argument("schema: text field '" + t.name + "' needs max_tokens >= 1");
    }
    for (const auto& v : vitals) claim(v.name);
    for (const auto& t : tasks) claim(t);
  }
};

struct VitalSample {
  double minutes = 0.0;
  double value = 0.0;
  bool operator==(const VitalSample&) const = default;
};

using VitalSeries = std::vector<VitalSample>;

struct PatientRecord {
  std::uint64_t id = 0;
  std::vector<int> categorical;
  std::vector<double> continuous;
  std::vector<std::uint8_t> continuous_missing;  // 1 = missing, value stored as 0
  std::vector<std::vector<int>> text;
  std::vector<VitalSeries> vitals;
  std::vector<std::uint8_t> labels;         // 0/1, meaningful only where present
  std::vector<std::uint8_t> label_present;  // 1 = present

  bool operator==(const PatientRecord&) const = default;

  bool has_label(std::size_t task) const { return label_present.at(task) != 0; }
};

enum class Provenance { ingested, synthetic };

struct Cohort {
  FeatureSchema schema;
  std::vector<PatientRecord> records;
  Provenance provenance = Provenance::ingested;

  bool operator==(const Cohort&) const = default;

  std::size_t size() const { return records.size(); }
};

class RecordError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws RecordError naming the first violated constraint.
inline void validate_record(const FeatureSchema& schema, const PatientRecord& r) {
  auto fail = [&](const std::string& what) {
    throw RecordError("record " + std::to_string(r.id) + ": " + what);
  };
  if (r.categorical.size() != schema.categorical.size()) fail("categorical arity mismatch");
  if (r.continuous.size() != schema.continuous.size() || r.continuous_missing.size() != schema.continuous.size())
    fail("continuous arity mismatch");
  if (r.text.size() != schema.text.size()) fail("text field arity mismatch");
  if (r.vitals.size() != schema.vitals.size()) fail("vital channel arity mismatch");
  if (r.labels.size() != schema.tasks.size() || r.label_present.size() != schema.tasks.size())
    fail("label arity mismatch");
  for (std::size_t i = 0; i < schema.categorical.size(); ++i) {
    const auto& f = schema.categorical[i];
    if (r.categorical[i] < 0 || r.categorical[i] >= f.cardinality)
      fail("categorical '" + f.name + "' id " + std::to_string(r.categorical[i]) + " outside [0, " +
           std::to_string(f.cardinality) + ")");
  }
  for (std::size_t i = 0; i < schema.continuous.size(); ++i) {
    if (r.continuous_missing[i] && r.continuous[i] != 0.0) fail("masked continuous '" + schema.continuous[i] + "' not stored as 0");
    if (!std::isfinite(r.continuous[i])) fail("continuous '" + schema.continuous[i] + "' is not finite");
  }
  for (std::size_t i = 0; i < schema.text.size(); ++i)
    for (int tok : r.text[i])
      if (tok < 0 || tok >= schema.vocab_size)
        fail("text '" + schema.text[i].name + "' token " + std::to_string(tok) + " outside vocabulary of " +
             std::to_string(schema.vocab_size));
  for (std::size_t c = 0; c < schema.vitals.size(); ++c) {
    const auto& s = r.vitals[c];
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!std::isfinite(s[j].minutes) || !std::isfinite(s[j].value))
        fail("vital '" + schema.vitals[c].name + "' has a non-finite sample");
      if (j > 0 && !(s[j].minutes > s[j - 1].minutes))
        fail("vital '" + schema.vitals[c].name + "' timestamps not strictly increasing");
    }
  }
  for (std::size_t k = 0; k < schema.tasks.size(); ++k)
    if (r.label_present[k] && r.labels[k] > 1) fail("label '" + schema.tasks[k] + "' not in {0, 1}");
}

inline void validate_cohort(const Cohort& cohort) {
  cohort.schema.validate();
  if (cohort.records.empty()) throw std::invalid_argument("cohort is empty");
  for (const auto& r : cohort.records) validate_record(cohort.schema, r);
}

/// Positive / negative / present counts of one task.
struct LabelCounts {
  std::size_t positives = 0;
  std::size_t negatives = 0;
  double prevalence() const {
    const auto n = positives + negatives;
    return n ? static_cast<double>(positives) / static_cast<double>(n) : 0.0;
  }
};

inline LabelCounts label_counts(const Cohort& cohort, std::size_t task) {
  LabelCounts counts;
  for (const auto& r : cohort.records) {
    if (!r.has_label(task)) continue;
    (r.labels[task] ? counts.positives : counts.negatives)++;
  }
  return counts;
}

}  // namespace orthtd
