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

#ifndef PXCNN_EXPERIMENT_HPP_
#define PXCNN_EXPERIMENT_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "pxcnn/data.hpp"
#include "pxcnn/error.hpp"
#include "pxcnn/metrics.hpp"
#include "pxcnn/model.hpp"

namespace pxcnn {

/// One point of the hyperparameter grid.
struct Cell {
  std::size_t extra_layers = 2;
  std::size_t epochs = 5;

  friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct SweepGrid {
  std::vector<std::size_t> extra_layers{1, 2, 3, 4};
  std::vector<std::size_t> epochs{5, 10, 20};
  std::size_t repeats = 5;
  std::uint64_t base_seed = 0;
  double target_sensitivity = 0.90;
};

inline void validate(const SweepGrid& g) {
  if (g.extra_layers.empty() || g.epochs.empty()) fail_argument("sweep grid lists must be nonempty");
  if (g.repeats < 1) fail_argument("sweep repeats must be at least 1");
  if (std::find(g.epochs.begin(), g.epochs.end(), std::size_t{0}) != g.epochs.end()) {
    fail_argument("sweep epochs must be positive");
  }
  if (!(g.target_sensitivity > 0.0 && g.target_sensitivity <= 1.0)) {
    fail_argument("target sensitivity must lie in (0, 1]");
  }
}

/// Grid cells in ascending (extra_layers, epochs) order, duplicates removed.
inline std::vector<Cell> grid_cells(const SweepGrid& g) {
  std::vector<Cell> cells;
  for (std::size_t l : g.extra_layers) {
    for (std::size_t e : g.epochs) cells.push_back({l, e});
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  return cells;
}

/// Everything about a trial except the swept cell and the seed.
struct TrialSetup {
  ModelConfig model;
  TrainConfig train;
};

struct TrialResult {
  Cell cell;
  std::uint64_t seed = 0;
  TrainingHistory history;
  MetricsReport report;  // on the test set, at the tuned threshold
};

/// Builds, trains and threshold-tunes one model. The test set doubles as the
/// per-epoch validation set and as the tuning set.
inline TrialResult run_trial(const Cell& cell, std::uint64_t seed, const SplitOf<Sample>& data,
                             double target_sensitivity, const TrialSetup& setup) {
  try {
    ModelConfig mc = setup.model;
    mc.extra_layers = cell.extra_layers;
    TrainConfig tc = setup.train;
    tc.epochs = cell.epochs;
    tc.seed = seed;
    if (tc.augment) tc.augment->seed = seed;
    TrainResult trained = train(build_model(mc, seed), data.train, data.test, tc);
    const Evaluation eval = evaluate(trained.model, data.test);
    std::vector<int> labels;
    labels.reserve(data.test.size());
    for (const Sample& s : data.test) labels.push_back(s.label);
    return {cell, seed, std::move(trained.history), tune_threshold(eval.probabilities, labels, target_sensitivity)};
  } catch (const Error& e) {
    throw Error(e.kind(), "cell (extra_layers " + std::to_string(cell.extra_layers) + ", epochs " +
                              std::to_string(cell.epochs) + ") seed " + std::to_string(seed) + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Overfitting

struct OverfitReport {
  bool flagged = false;
  std::optional<std::size_t> first_flag_epoch;  // 1-based
  std::size_t evaluated_epoch = 0;              // flagged epoch, or the last epoch
  double gap = 0.0;                             // train - validation accuracy there
  double val_slope = 0.0;                       // per-epoch change over the 3-epoch window
  double train_slope = 0.0;
};

inline constexpr std::size_t kOverfitWindow = 3;
inline constexpr double kOverfitGap = 0.05;

/**
 * Flags the first epoch e where, over epochs e-2..e, validation accuracy is
 * non-increasing while training accuracy is non-decreasing, and the train
 * minus validation accuracy gap at e is at least 0.05.
 */
inline OverfitReport detect_overfit(const TrainingHistory& history) {
  const auto& r = history.records;
  if (r.size() < kOverfitWindow + 1) {
    fail_argument("overfit detection needs at least 4 epochs, got " + std::to_string(r.size()));
  }
  auto diagnose = [&](std::size_t e, OverfitReport& out) {
    out.evaluated_epoch = e + 1;
    out.gap = r[e].train_accuracy - r[e].val_accuracy;
    out.val_slope = (r[e].val_accuracy - r[e - 2].val_accuracy) / 2.0;
    out.train_slope = (r[e].train_accuracy - r[e - 2].train_accuracy) / 2.0;
  };
  OverfitReport out;
  for (std::size_t e = kOverfitWindow - 1; e < r.size(); ++e) {
    bool val_falling = true, train_rising = true;
    for (std::size_t k = e + 1 - kOverfitWindow; k < e; ++k) {
      val_falling = val_falling && r[k + 1].val_accuracy <= r[k].val_accuracy;
      train_rising = train_rising && r[k + 1].train_accuracy >= r[k].train_accuracy;
    }
    // 1e-12 absorbs decimal round-off such as 0.70 - 0.65 < 0.05.
    const bool wide_gap = r[e].train_accuracy - r[e].val_accuracy >= kOverfitGap - 1e-12;
    if (val_falling && train_rising && wide_gap) {
      out.flagged = true;
      out.first_flag_epoch = e + 1;
      diagnose(e, out);
      return out;
    }
  }
  diagnose(r.size() - 1, out);
  return out;
}

// ---------------------------------------------------------------------------
// Sweep

struct MetricStats {
  std::optional<double> mean;
  std::optional<double> std;  // sample standard deviation; undefined below 2 values
};

struct CellSummary {
  Cell cell;
  std::size_t repeats = 0;    // trials attempted
  std::size_t succeeded = 0;  // trials that finished
  std::map<std::string, MetricStats, std::less<>> stats;
  TrainingHistory mean_history;
  bool overfit_flagged = false;
  bool failed = false;
  std::vector<std::string> errors;

  const MetricStats& stat(std::string_view name) const {
    static const MetricStats kEmpty;
    const auto it = stats.find(name);
    return it == stats.end() ? kEmpty : it->second;
  }
};

struct SweepReport {
  std::vector<CellSummary> cells;  // ascending (extra_layers, epochs)
  std::optional<Cell> best_cell;
};

/// Mean and sample standard deviation over the defined values, summed in
/// the given order.
inline MetricStats summarize(std::span<const std::optional<double>> values) {
  std::vector<double> v;
  for (const auto& x : values) {
    if (x) v.push_back(*x);
  }
  MetricStats s;
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  // Rounding can push the quotient just outside the hull of the values.
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  s.mean = std::clamp(mean, *lo, *hi);
  if (v.size() >= 2) {
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

inline TrainingHistory mean_history(std::span<const TrialResult> trials) {
  TrainingHistory out;
  if (trials.empty()) return out;
  const std::size_t epochs = trials.front().history.size();
  const auto n = static_cast<double>(trials.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    EpochRecord rec{e + 1, 0.0, 0.0, 0.0, 0.0};
    for (const TrialResult& t : trials) {
      const EpochRecord& r = t.history.records.at(e);
      rec.train_loss += r.train_loss;
      rec.train_accuracy += r.train_accuracy;
      rec.val_loss += r.val_loss;
      rec.val_accuracy += r.val_accuracy;
    }
    rec.train_loss /= n;
    rec.train_accuracy /= n;
    rec.val_loss /= n;
    rec.val_accuracy /= n;
    out.records.push_back(rec);
  }
  return out;
}

/// Aggregates the successful trials of one cell (passed in repeat order).
inline CellSummary summarize_cell(const Cell& cell, std::size_t repeats, std::span<const TrialResult> trials,
                                  std::vector<std::string> errors = {}) {
  CellSummary s;
  s.cell = cell;
  s.repeats = repeats;
  s.succeeded = trials.size();
  s.failed = trials.empty();
  s.errors = std::move(errors);
  for (std::string_view name : kMetricNames) {
    std::vector<std::optional<double>> values;
    for (const TrialResult& t : trials) values.push_back(metric_value(t.report, name));
    s.stats.emplace(std::string(name), summarize(values));
  }
  s.mean_history = mean_history(trials);
  if (s.mean_history.size() >= kOverfitWindow + 1) s.overfit_flagged = detect_overfit(s.mean_history).flagged;
  return s;
}

/**
 * Best cell: among non-failed cells whose mean sensitivity reaches the
 * target, the highest mean specificity; ties go to higher mean accuracy,
 * then fewer extra layers, then fewer epochs.
 */
inline std::optional<Cell> select_best(std::span<const CellSummary> cells, double target_sensitivity) {
  const CellSummary* best = nullptr;
  auto better = [](const CellSummary& a, const CellSummary& b) {
    const double spec_a = a.stat("specificity").mean.value_or(-1.0);
    const double spec_b = b.stat("specificity").mean.value_or(-1.0);
    if (spec_a != spec_b) return spec_a > spec_b;
    const double acc_a = a.stat("accuracy").mean.value_or(-1.0);
    const double acc_b = b.stat("accuracy").mean.value_or(-1.0);
    if (acc_a != acc_b) return acc_a > acc_b;
    return a.cell < b.cell;
  };
  for (const CellSummary& c : cells) {
    const auto sens = c.stat("sensitivity").mean;
    if (c.failed || !sens || *sens < target_sensitivity) continue;
    if (!best || better(c, *best)) best = &c;
  }
  if (!best) return std::nullopt;
  return best->cell;
}

using TrialCallback = std::function<void(const Cell&, std::uint64_t seed, const std::string& error)>;

/**
 * Runs `repeats` trials per cell with seeds base_seed + 0 .. repeats - 1 on
 * up to `jobs` threads. Results are collected by (cell, repeat) slot, so the
 * report does not depend on scheduling or on the grid's listing order.
 * A failing trial is recorded and skipped; a cell fails only when all of its
 * trials do.
 */
inline SweepReport sweep(const SweepGrid& grid, const SplitOf<Sample>& data, const TrialSetup& setup,
                         std::size_t jobs = 1, const TrialCallback& on_trial = {}) {
  validate(grid);
  const std::vector<Cell> cells = grid_cells(grid);
  const std::size_t total = cells.size() * grid.repeats;
  std::vector<std::optional<TrialResult>> results(total);
  std::vector<std::string> errors(total);
  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;

  auto worker = [&] {
    for (std::size_t task = next++; task < total; task = next++) {
      const Cell& cell = cells[task / grid.repeats];
      const std::uint64_t seed = grid.base_seed + task % grid.repeats;
      try {
        results[task] = run_trial(cell, seed, data, grid.target_sensitivity, setup);
      } catch (const std::exception& e) {
        errors[task] = e.what();
      }
      if (on_trial) {
        std::lock_guard lock(callback_mutex);
        on_trial(cell, seed, errors[task]);
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(total, 1));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  SweepReport report;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<TrialResult> ok;
    std::vector<std::string> cell_errors;
    for (std::size_t r = 0; r < grid.repeats; ++r) {
      const std::size_t task = c * grid.repeats + r;
      if (results[task]) {
        ok.push_back(std::move(*results[task]));
      } else {
        cell_errors.push_back(errors[task]);
      }
    }
    report.cells.push_back(summarize_cell(cells[c], grid.repeats, ok, std::move(cell_errors)));
  }
  report.best_cell = select_best(report.cells, grid.target_sensitivity);
  return report;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json to_json(const SweepReport& report) {
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const CellSummary& c : report.cells) {
    nlohmann::ordered_json mean, stdev;
    for (std::string_view name : kMetricNames) {
      const MetricStats& s = c.stat(name);
      mean[std::string(name)] = optional_json(s.mean);
      stdev[std::string(name)] = optional_json(s.std);
    }
    nlohmann::ordered_json j;
    j["extra_layers"] = c.cell.extra_layers;
    j["epochs"] = c.cell.epochs;
    j["repeats"] = c.repeats;
    j["mean"] = std::move(mean);
    j["std"] = std::move(stdev);
    j["overfit_flagged"] = c.overfit_flagged;
    j["failed"] = c.failed;
    cells.push_back(std::move(j));
  }
  nlohmann::ordered_json out;
  out["cells"] = std::move(cells);
  if (report.best_cell) {
    out["best_cell"] = {{"extra_layers", report.best_cell->extra_layers}, {"epochs", report.best_cell->epochs}};
  } else {
    out["best_cell"] = nullptr;
  }
  return out;
}

/// Parses a report written by to_json. Per-trial details (errors, mean
/// histories) are not part of the file and come back empty.
inline SweepReport sweep_report_from_json(const nlohmann::ordered_json& j) {
  SweepReport report;
  try {
    for (const auto& jc : j.at("cells")) {
      CellSummary c;
      c.cell = {jc.at("extra_layers").get<std::size_t>(), jc.at("epochs").get<std::size_t>()};
      c.repeats = jc.at("repeats").get<std::size_t>();
      c.overfit_flagged = jc.at("overfit_flagged").get<bool>();
      c.failed = jc.at("failed").get<bool>();
      for (std::string_view name : kMetricNames) {
        MetricStats s;
        const auto& m = jc.at("mean").at(std::string(name));
        const auto& d = jc.at("std").at(std::string(name));
        if (!m.is_null()) s.mean = m.get<double>();
        if (!d.is_null()) s.std = d.get<double>();
        c.stats.emplace(std::string(name), s);
      }
      report.cells.push_back(std::move(c));
    }
    const auto& best = j.at("best_cell");
    if (!best.is_null()) {
      report.best_cell = Cell{best.at("extra_layers").get<std::size_t>(), best.at("epochs").get<std::size_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("malformed sweep report: ") + e.what());
  }
  return report;
}

}  // namespace pxcnn

#endif  // PXCNN_EXPERIMENT_HPP_
