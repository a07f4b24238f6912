#include "fedchain/metrics.hpp"

#include <cmath>

#include "fedchain/errors.hpp"

namespace fedchain {

namespace {

nlohmann::ordered_json opt_to_json(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

std::optional<double> opt_from_json(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["precision"] = opt_to_json(precision);
  j["sensitivity"] = opt_to_json(sensitivity);
  j["specificity"] = opt_to_json(specificity);
  j["accuracy"] = opt_to_json(accuracy);
  j["mae"] = opt_to_json(mae);
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.precision = opt_from_json(j, "precision");
  r.sensitivity = opt_from_json(j, "sensitivity");
  r.specificity = opt_from_json(j, "specificity");
  r.accuracy = opt_from_json(j, "accuracy");
  r.mae = opt_from_json(j, "mae");
  return r;
}

double mae(std::span<const double> actual, std::span<const double> predicted) {
  if (actual.size() != predicted.size()) throw InvalidArgument("mae: length mismatch");
  if (actual.empty()) throw InvalidArgument("mae: empty sequences");
  double sum = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    sum += std::abs(actual[i] - predicted[i]);
  }
  return sum / static_cast<double>(actual.size());
}

MetricsReport classification_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw InvalidArgument("classification_metrics: all counts zero");
  MetricsReport r;
  auto ratio = [](std::uint64_t num, std::uint64_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.sensitivity = ratio(c.tp, c.tp + c.fn);
  r.specificity = ratio(c.tn, c.tn + c.fp);
  r.accuracy = ratio(c.tp + c.tn, c.total());
  return r;
}

}  // namespace fedchain
