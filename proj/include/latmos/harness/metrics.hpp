#pragma once

// Acceptance accuracy with confusion counts, and summary statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "latmos/error.hpp"

namespace latmos::harness {

struct Confusion {
  std::int64_t tp = 0;
  std::int64_t tn = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t abstained = 0;  // already counted in fp / fn

  std::int64_t total() const { return tp + tn + fp + fn; }
  double accuracy() const {
    require(total() > 0, "Confusion::accuracy: no items");
    return static_cast<double>(tp + tn) / static_cast<double>(total());
  }
};

inline nlohmann::json to_json(const Confusion& c) {
  return {{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}, {"abstained", c.abstained}};
}

inline Confusion confusion_from_json(const nlohmann::json& j) {
  Confusion c;
  c.tp = j.at("tp").get<std::int64_t>();
  c.tn = j.at("tn").get<std::int64_t>();
  c.fp = j.at("fp").get<std::int64_t>();
  c.fn = j.at("fn").get<std::int64_t>();
  c.abstained = j.value("abstained", std::int64_t{0});
  return c;
}

inline Confusion compute_accuracy(const std::vector<bool>& predictions, const std::vector<bool>& labels) {
  require(predictions.size() == labels.size(), "compute_accuracy: lengths differ");
  require(!labels.empty(), "compute_accuracy: empty input");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) {
      predictions[i] ? ++c.tp : ++c.fn;
    } else {
      predictions[i] ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

// Tri-state decisions: an abstention is wrong whatever the label.
inline void add_decision(Confusion& c, bool label, bool abstain, bool accept) {
  if (abstain) {
    ++c.abstained;
    label ? ++c.fn : ++c.fp;
  } else if (label) {
    accept ? ++c.tp : ++c.fn;
  } else {
    accept ? ++c.fp : ++c.tn;
  }
}

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  double min = 0.0;
  double max = 0.0;
  double median = 0.0;
  std::size_t n = 0;
};

inline Summary summarize(std::vector<double> v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - s.mean) * (x - s.mean);
  s.std = v.size() > 1 ? std::sqrt(sq / static_cast<double>(v.size() - 1)) : 0.0;
  std::sort(v.begin(), v.end());
  s.min = v.front();
  s.max = v.back();
  const std::size_t m = v.size() / 2;
  s.median = v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  return s;
}

inline nlohmann::json to_json(const Summary& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}, {"median", s.median}, {"n", s.n}};
}

}  // namespace latmos::harness
