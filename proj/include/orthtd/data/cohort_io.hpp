// Line-delimited JSON record files and the JSON schema document.
//
// Record line: {"id": 7, "<categorical>": 2, "<continuous>": 1.5 | null,
//               "<text>": [tokens...], "<vital>": [[minutes, value], ...],
//               "<task>": 0 | 1 | null}
// Absent continuous keys read as missing, absent text/vital keys as empty,
// absent task keys as unlabeled. Categorical keys are required.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "json.hpp"
#include "orthtd/data/cohort.hpp"

namespace orthtd {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

class CohortFormatError : public std::runtime_error {
 public:
  CohortFormatError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline ordered_json schema_to_json(const FeatureSchema& schema) {
  ordered_json j;
  j["categorical"] = ordered_json::array();
  for (const auto& c : schema.categorical) j["categorical"].push_back({{"name", c.name}, {"cardinality", c.cardinality}});
  j["continuous"] = schema.continuous;
  j["text"] = ordered_json::array();
  for (const auto& t : schema.text) j["text"].push_back({{"name", t.name}, {"max_tokens", t.max_tokens}});
  j["vitals"] = ordered_json::array();
  for (const auto& v : schema.vitals) j["vitals"].push_back({{"name", v.name}, {"unit", v.unit}});
  j["tasks"] = schema.tasks;
  j["vocab_size"] = schema.vocab_size;
  return j;
}

inline FeatureSchema schema_from_json(const json& j) {
  static const std::set<std::string> known{"categorical", "continuous", "text", "vitals", "tasks", "vocab_size"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw std::invalid_argument("schema: unknown key '" + key + "'");
  FeatureSchema s;
  for (const auto& c : j.value("categorical", json::array()))
    s.categorical.push_back({c.at("name").get<std::string>(), c.at("cardinality").get<int>()});
  s.continuous = j.value("continuous", std::vector<std::string>{});
  for (const auto& t : j.value("text", json::array()))
    s.text.push_back({t.at("name").get<std::string>(), t.at("max_tokens").get<std::size_t>()});
  for (const auto& v : j.value("vitals", json::array()))
    s.vitals.push_back({v.at("name").get<std::string>(), v.value("unit", std::string{})});
  s.tasks = j.at("tasks").get<std::vector<std::string>>();
  s.vocab_size = j.value("vocab_size", 2);
  s.validate();
  return s;
}

inline FeatureSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open schema file " + path.string());
  return schema_from_json(json::parse(in));
}

inline void save_schema(const FeatureSchema& schema, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write schema file " + path.string());
  out << schema_to_json(schema).dump(2) << '\n';
}

inline ordered_json record_to_json(const FeatureSchema& schema, const PatientRecord& r) {
  ordered_json j;
  j["id"] = r.id;
  for (std::size_t i = 0; i < schema.categorical.size(); ++i) j[schema.categorical[i].name] = r.categorical[i];
  for (std::size_t i = 0; i < schema.continuous.size(); ++i) {
    if (r.continuous_missing[i])
      j[schema.continuous[i]] = nullptr;
    else
      j[schema.continuous[i]] = r.continuous[i];
  }
  for (std::size_t i = 0; i < schema.text.size(); ++i) j[schema.text[i].name] = r.text[i];
  for (std::size_t c = 0; c < schema.vitals.size(); ++c) {
    auto series = ordered_json::array();
    for (const auto& s : r.vitals[c]) series.push_back({s.minutes, s.value});
    j[schema.vitals[c].name] = std::move(series);
  }
  for (std::size_t k = 0; k < schema.tasks.size(); ++k) {
    if (r.label_present[k])
      j[schema.tasks[k]] = static_cast<int>(r.labels[k]);
    else
      j[schema.tasks[k]] = nullptr;
  }
  return j;
}

namespace detail {

enum class FieldKind { categorical, continuous, text, vital, task };

inline std::unordered_map<std::string, std::pair<FieldKind, std::size_t>> field_index(const FeatureSchema& s) {
  std::unordered_map<std::string, std::pair<FieldKind, std::size_t>> index;
  for (std::size_t i = 0; i < s.categorical.size(); ++i) index[s.categorical[i].name] = {FieldKind::categorical, i};
  for (std::size_t i = 0; i < s.continuous.size(); ++i) index[s.continuous[i]] = {FieldKind::continuous, i};
  for (std::size_t i = 0; i < s.text.size(); ++i) index[s.text[i].name] = {FieldKind::text, i};
  for (std::size_t i = 0; i < s.vitals.size(); ++i) index[s.vitals[i].name] = {FieldKind::vital, i};
  for (std::size_t i = 0; i < s.tasks.size(); ++i) index[s.tasks[i]] = {FieldKind::task, i};
  return index;
}

}  // namespace detail

/// Parses one record line; errors carry the 1-based line number.
inline PatientRecord record_from_json_line(const FeatureSchema& schema, const std::string& line, std::size_t line_no,
                                           const std::unordered_map<std::string, std::pair<detail::FieldKind, std::size_t>>& index) {
  using detail::FieldKind;
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw CohortFormatError(line_no, std::string("malformed record: ") + e.what());
  }
  if (!j.is_object()) throw CohortFormatError(line_no, "record is not an object");

  PatientRecord r;
  r.id = line_no - 1;
  r.categorical.assign(schema.categorical.size(), -1);
  r.continuous.assign(schema.continuous.size(), 0.0);
  r.continuous_missing.assign(schema.continuous.size(), 1);
  r.text.assign(schema.text.size(), {});
  r.vitals.assign(schema.vitals.size(), {});
  r.labels.assign(schema.tasks.size(), 0);
  r.label_present.assign(schema.tasks.size(), 0);

  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "id") {
        r.id = value.get<std::uint64_t>();
        continue;
      }
      auto it = index.find(key);
      if (it == index.end()) throw CohortFormatError(line_no, "unknown field '" + key + "'");
      const auto [kind, i] = it->second;
      switch (kind) {
        case FieldKind::categorical: {
          if (!value.is_number_integer()) throw CohortFormatError(line_no, "categorical '" + key + "' is not an integer");
          const auto id = value.get<long long>();
          const int card = schema.categorical[i].cardinality;
          if (id < 0 || id >= card)
            throw CohortFormatError(line_no, "categorical '" + key + "' id " + std::to_string(id) + " outside [0, " +
                                                 std::to_string(card) + ")");
          r.categorical[i] = static_cast<int>(id);
          break;
        }
        case FieldKind::continuous:
          if (value.is_null()) break;
          if (!value.is_number()) throw CohortFormatError(line_no, "continuous '" + key + "' is not a number");
          r.continuous[i] = value.get<double>();
          r.continuous_missing[i] = 0;
          if (!std::isfinite(r.continuous[i])) throw CohortFormatError(line_no, "continuous '" + key + "' is not finite");
          break;
        case FieldKind::text:
          for (const auto& tok : value) {
            const auto id = tok.get<long long>();
            if (id < 0 || id >= schema.vocab_size)
              throw CohortFormatError(line_no, "text '" + key + "' token " + std::to_string(id) + " outside vocabulary");
            r.text[i].push_back(static_cast<int>(id));
          }
          break;
        case FieldKind::vital:
          for (const auto& pair : value) {
            if (!pair.is_array() || pair.size() != 2)
              throw CohortFormatError(line_no, "vital '" + key + "' sample is not a [time, value] pair");
            VitalSample s{pair[0].get<double>(), pair[1].get<double>()};
            if (!r.vitals[i].empty() && !(s.minutes > r.vitals[i].back().minutes))
              throw CohortFormatError(line_no, "vital '" + key + "' timestamps not strictly increasing");
            r.vitals[i].push_back(s);
          }
          break;
        case FieldKind::task:
          if (value.is_null()) break;
          if (!value.is_number_integer() || (value.get<int>() != 0 && value.get<int>() != 1))
            throw CohortFormatError(line_no, "label '" + key + "' not in {0, 1}");
          r.labels[i] = static_cast<std::uint8_t>(value.get<int>());
          r.label_present[i] = 1;
          break;
      }
    }
  } catch (const json::exception& e) {
    throw CohortFormatError(line_no, std::string("malformed record: ") + e.what());
  }
  for (std::size_t i = 0; i < schema.categorical.size(); ++i)
    if (r.categorical[i] < 0)
      throw CohortFormatError(line_no, "missing categorical '" + schema.categorical[i].name + "'");
  try {
    validate_record(schema, r);
  } catch (const RecordError& e) {
    throw CohortFormatError(line_no, e.what());
  }
  return r;
}

inline Cohort read_cohort(std::istream& in, const FeatureSchema& schema) {
  schema.validate();
  const auto index = detail::field_index(schema);
  Cohort cohort;
  cohort.schema = schema;
  cohort.provenance = Provenance::ingested;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    cohort.records.push_back(record_from_json_line(schema, line, line_no, index));
  }
  if (cohort.records.empty()) throw CohortFormatError(line_no, "cohort file contains no records");
  return cohort;
}

/// Reads a record file against `schema`, preserving file order.
inline Cohort load_cohort(const std::filesystem::path& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open cohort file " + path.string());
  return read_cohort(in, schema);
}

inline void write_cohort(std::ostream& out, const Cohort& cohort) {
  for (const auto& r : cohort.records) out << record_to_json(cohort.schema, r).dump() << '\n';
}

inline void write_cohort(const Cohort& cohort, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write cohort file " + path.string());
  write_cohort(out, cohort);
}

}  // namespace orthtd
