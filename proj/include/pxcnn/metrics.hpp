/**
 * Copyright 2026 The pxcnn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef PXCNN_METRICS_HPP_
#define PXCNN_METRICS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pxcnn/error.hpp"

namespace pxcnn {

struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;

  std::size_t total() const { return tp + fn + tn + fp; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Binary classification metrics. A metric whose denominator is zero is
/// left empty (undefined) rather than coerced to 0 or 1.
struct MetricsReport {
  double threshold = 0.5;
  std::optional<double> sensitivity;  // tp / (tp + fn), identical to recall
  std::optional<double> specificity;  // tn / (tn + fp)
  std::optional<double> accuracy;     // (tp + tn) / n
  std::optional<double> precision;    // tp / (tp + fp)
  std::optional<double> recall;
  std::optional<double> f1;           // 2 p r / (p + r)
  std::size_t n = 0;
  std::optional<bool> target_met;     // set by threshold tuning only
  ConfusionMatrix counts;             // not part of the JSON schema

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline void check_labels(std::span<const double> probabilities, std::span<const int> labels) {
  if (probabilities.size() != labels.size()) {
    fail_argument("probabilities (" + std::to_string(probabilities.size()) + ") and labels (" +
                  std::to_string(labels.size()) + ") differ in length");
  }
  if (probabilities.empty()) fail_argument("cannot score an empty set");
  for (int y : labels) {
    if (y != 0 && y != 1) fail_argument("labels must be 0 or 1");
  }
  for (double p : probabilities) {
    if (!std::isfinite(p)) fail_argument("probabilities must be finite");
  }
}

/// Counts with the rule: predicted positive iff probability >= threshold.
inline ConfusionMatrix confusion(std::span<const double> probabilities, std::span<const int> labels,
                                 double threshold) {
  check_labels(probabilities, labels);
  if (!(threshold >= 0.0 && threshold <= 1.0)) fail_argument("threshold must lie in [0, 1]");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool predicted = probabilities[i] >= threshold;
    if (labels[i] == 1) {
      (predicted ? cm.tp : cm.fn) += 1;
    } else {
      (predicted ? cm.fp : cm.tn) += 1;
    }
  }
  return cm;
}

namespace detail {
inline std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace detail

inline MetricsReport compute_metrics(const ConfusionMatrix& cm, double threshold = 0.5) {
  MetricsReport r;
  r.threshold = threshold;
  r.counts = cm;
  r.n = cm.total();
  r.sensitivity = detail::ratio(cm.tp, cm.tp + cm.fn);
  r.recall = r.sensitivity;
  r.specificity = detail::ratio(cm.tn, cm.tn + cm.fp);
  r.accuracy = detail::ratio(cm.tp + cm.tn, r.n);
  r.precision = detail::ratio(cm.tp, cm.tp + cm.fp);
  if (r.precision && r.recall && *r.precision + *r.recall > 0.0) {
    r.f1 = 2.0 * *r.precision * *r.recall / (*r.precision + *r.recall);
  }
  return r;
}

/**
 * Picks the largest candidate threshold whose sensitivity reaches `target`.
 *
 * Candidates are the distinct probabilities plus 0. Since sensitivity only
 * falls as the threshold rises, the largest qualifying candidate is also the
 * one with the highest specificity. A target above 1 cannot be met; the
 * result then uses threshold 0 and target_met = false.
 */
inline MetricsReport tune_threshold(std::span<const double> probabilities, std::span<const int> labels,
                                    double target_sensitivity) {
  check_labels(probabilities, labels);
  if (!(target_sensitivity > 0.0)) fail_argument("target sensitivity must be positive");
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) fail_argument("threshold tuning needs at least one positive label");

  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return probabilities[a] > probabilities[b]; });

  // Walk candidates from the largest probability down; after consuming every
  // sample with probability >= t, tp counts the positives at threshold t.
  std::optional<double> chosen;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = probabilities[order[i]];
    while (i < order.size() && probabilities[order[i]] == t) tp += labels[order[i++]] == 1 ? 1 : 0;
    if (t >= 0.0 && t <= 1.0 &&
        static_cast<double>(tp) / static_cast<double>(positives) >= target_sensitivity) {
      chosen = t;
      break;
    }
  }
  const bool met = chosen.has_value() || target_sensitivity <= 1.0;
  const double threshold = chosen.value_or(0.0);
  MetricsReport report = compute_metrics(confusion(probabilities, labels, threshold), threshold);
  report.target_met = met;
  return report;
}

// ---------------------------------------------------------------------------
// JSON: fixed key order, null for undefined values.

inline constexpr std::array<std::string_view, 7> kMetricNames = {
    "threshold", "sensitivity", "specificity", "accuracy", "precision", "recall", "f1"};

/// Value of a named metric ("threshold" is always defined).
inline std::optional<double> metric_value(const MetricsReport& r, std::string_view name) {
  if (name == "threshold") return r.threshold;
  if (name == "sensitivity") return r.sensitivity;
  if (name == "specificity") return r.specificity;
  if (name == "accuracy") return r.accuracy;
  if (name == "precision") return r.precision;
  if (name == "recall") return r.recall;
  if (name == "f1") return r.f1;
  fail_argument("unknown metric " + std::string(name));
}

template <typename T>
nlohmann::ordered_json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["threshold"] = r.threshold;
  j["sensitivity"] = optional_json(r.sensitivity);
  j["specificity"] = optional_json(r.specificity);
  j["accuracy"] = optional_json(r.accuracy);
  j["precision"] = optional_json(r.precision);
  j["recall"] = optional_json(r.recall);
  j["f1"] = optional_json(r.f1);
  j["n"] = r.n;
  j["target_met"] = optional_json(r.target_met);
  return j;
}

inline MetricsReport metrics_from_json(const nlohmann::ordered_json& j) {
  auto opt = [&](const char* key) -> std::optional<double> {
    const auto& v = j.at(key);
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
  };
  MetricsReport r;
  try {
    r.threshold = j.at("threshold").get<double>();
    r.sensitivity = opt("sensitivity");
    r.specificity = opt("specificity");
    r.accuracy = opt("accuracy");
    r.precision = opt("precision");
    r.recall = opt("recall");
    r.f1 = opt("f1");
    r.n = j.at("n").get<std::size_t>();
    if (!j.at("target_met").is_null()) r.target_met = j.at("target_met").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("malformed metrics report: ") + e.what());
  }
  return r;
}

}  // namespace pxcnn

#endif  // PXCNN_METRICS_HPP_
