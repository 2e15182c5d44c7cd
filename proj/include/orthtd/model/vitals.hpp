// Vital-sign series -> fixed-length summary and threshold-exposure features.
#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "orthtd/data/cohort.hpp"

namespace orthtd {

enum class VitalStat { mean, min, max, std, last };
enum class ThresholdDirection { below, above };

inline const char* to_string(VitalStat s) {
  switch (s) {
    case VitalStat::mean: return "mean";
    case VitalStat::min: return "min";
    case VitalStat::max: return "max";
    case VitalStat::std: return "std";
    case VitalStat::last: return "last";
  }
  return "?";
}

inline VitalStat vital_stat_from_string(const std::string& s) {
  for (auto v : {VitalStat::mean, VitalStat::min, VitalStat::max, VitalStat::std, VitalStat::last})
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown vital statistic '" + s + "'");
}

struct VitalThreshold {
  double value = 65.0;
  ThresholdDirection direction = ThresholdDirection::below;
  bool operator==(const VitalThreshold&) const = default;
};

struct ChannelFeatureSpec {
  std::vector<VitalStat> stats{VitalStat::mean, VitalStat::min, VitalStat::max, VitalStat::std, VitalStat::last};
  std::vector<VitalThreshold> thresholds{{65.0, ThresholdDirection::below}};
  bool operator==(const ChannelFeatureSpec&) const = default;
};

/// Per-channel feature recipes; channels without an entry use `fallback`.
struct VitalFeatureSpec {
  std::vector<std::pair<std::string, ChannelFeatureSpec>> channels;
  ChannelFeatureSpec fallback;
  bool operator==(const VitalFeatureSpec&) const = default;

  const ChannelFeatureSpec& for_channel(const std::string& name) const {
    for (const auto& [n, spec] : channels)
      if (n == name) return spec;
    return fallback;
  }
};

struct NamedFeature {
  std::string name;
  double value = 0.0;
  bool missing = false;
};

namespace detail {

inline std::string format_threshold(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

struct Exposure {
  double depth = 0.0;     // time-weighted mean excursion beyond the threshold
  double fraction = 0.0;  // fraction of time beyond the threshold
};

// Piecewise-linear interpolation between samples; excursion e(t) = signed
// distance beyond the threshold, integrated where positive.
inline Exposure threshold_exposure(const VitalSeries& s, const VitalThreshold& th) {
  auto excursion = [&](double v) { return th.direction == ThresholdDirection::below ? th.value - v : v - th.value; };
  if (s.size() == 1) {
    const double e = excursion(s[0].value);
    return {std::max(e, 0.0), e > 0 ? 1.0 : 0.0};
  }
  double area = 0.0, time_beyond = 0.0;
  for (std::size_t j = 1; j < s.size(); ++j) {
    const double dt = s[j].minutes - s[j - 1].minutes;
    const double e0 = excursion(s[j - 1].value), e1 = excursion(s[j].value);
    if (e0 >= 0 && e1 >= 0) {
      area += 0.5 * (e0 + e1) * dt;
      if (e0 > 0 || e1 > 0) time_beyond += dt;
    } else if (e0 > 0 || e1 > 0) {
      const double hi = std::max(e0, e1);
      const double part = hi / (hi - std::min(e0, e1));
      area += 0.5 * hi * part * dt;
      time_beyond += part * dt;
    }
  }
  const double duration = s.back().minutes - s.front().minutes;
  return {area / duration, time_beyond / duration};
}

}  // namespace detail

inline std::vector<std::string> vital_feature_names(const std::string& channel, const ChannelFeatureSpec& spec) {
  std::vector<std::string> names;
  for (auto stat : spec.stats) names.push_back(channel + "_" + to_string(stat));
  for (const auto& th : spec.thresholds) {
    const std::string tag = channel + (th.direction == ThresholdDirection::below ? "_below" : "_above") +
                            detail::format_threshold(th.value);
    names.push_back(tag + "_depth");
    names.push_back(tag + "_frac");
  }
  return names;
}

/// Features of one channel's series. Empty series produce zeros flagged missing.
inline std::vector<NamedFeature> extract_vital_features(const VitalSeries& series, const std::string& channel,
                                                        const ChannelFeatureSpec& spec) {
  for (std::size_t j = 1; j < series.size(); ++j)
    if (!(series[j].minutes > series[j - 1].minutes))
      throw std::invalid_argument("vital '" + channel + "': timestamps not strictly increasing");
  const auto names = vital_feature_names(channel, spec);
  std::vector<NamedFeature> out;
  out.reserve(names.size());
  if (series.empty()) {
    for (const auto& n : names) out.push_back({n, 0.0, true});
    return out;
  }
  double sum = 0.0, lo = series[0].value, hi = series[0].value;
  for (const auto& s : series) {
    sum += s.value;
    lo = std::min(lo, s.value);
    hi = std::max(hi, s.value);
  }
  const double mean = sum / static_cast<double>(series.size());
  double var = 0.0;
  for (const auto& s : series) var += (s.value - mean) * (s.value - mean);
  var /= static_cast<double>(series.size());

  std::size_t i = 0;
  for (auto stat : spec.stats) {
    double v = 0.0;
    switch (stat) {
      case VitalStat::mean: v = mean; break;
      case VitalStat::min: v = lo; break;
      case VitalStat::max: v = hi; break;
      case VitalStat::std: v = std::sqrt(var); break;
      case VitalStat::last: v = series.back().value; break;
    }
    out.push_back({names[i++], v, false});
  }
  for (const auto& th : spec.thresholds) {
    const auto exposure = detail::threshold_exposure(series, th);
    out.push_back({names[i++], exposure.depth, false});
    out.push_back({names[i++], exposure.fraction, false});
  }
  return out;
}

/// Appends every channel's vital features to the continuous feature list.
inline Cohort append_vital_features(const Cohort& cohort, const VitalFeatureSpec& spec) {
  Cohort out = cohort;
  for (const auto& ch : cohort.schema.vitals)
    for (auto& name : vital_feature_names(ch.name, spec.for_channel(ch.name))) out.schema.continuous.push_back(name);
  out.schema.validate();
  for (auto& r : out.records) {
    for (std::size_t c = 0; c < cohort.schema.vitals.size(); ++c) {
      const auto& ch = cohort.schema.vitals[c];
      for (const auto& f : extract_vital_features(r.vitals[c], ch.name, spec.for_channel(ch.name))) {
        r.continuous.push_back(f.missing ? 0.0 : f.value);
        r.continuous_missing.push_back(f.missing ? 1 : 0);
      }
    }
  }
  return out;
}

}  // namespace orthtd
