#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include <json.hpp>

namespace fedchain {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
};

/// Classification ratios plus mean absolute error. A ratio whose denominator
/// is zero is reported absent (serialized as JSON null), never silently 0.
struct MetricsReport {
  std::optional<double> precision;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> accuracy;
  std::optional<double> mae;

  nlohmann::ordered_json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

// Mean absolute error between two equal-length, non-empty sequences.
double mae(std::span<const double> actual, std::span<const double> predicted);

// precision = tp/(tp+fp), sensitivity = tp/(tp+fn),
// specificity = tn/(tn+fp), accuracy = (tp+tn)/total.
MetricsReport classification_metrics(const ConfusionCounts& c);

}  // namespace fedchain
