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

#ifndef PXCNN_REPORT_HPP_
#define PXCNN_REPORT_HPP_

#include <algorithm>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pxcnn/error.hpp"
#include "pxcnn/metrics.hpp"
#include "pxcnn/model.hpp"

namespace pxcnn {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr const char* kHistoryHeader = "epoch,train_loss,train_acc,val_loss,val_acc";

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Training history CSV

inline void write_history_csv(const TrainingHistory& history, std::ostream& out) {
  out << kHistoryHeader << '\n';
  for (const EpochRecord& r : history.records) {
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.train_accuracy) << ','
        << format_double(r.val_loss) << ',' << format_double(r.val_accuracy) << '\n';
  }
}

inline TrainingHistory read_history_csv(std::istream& in) {
  auto bad = [](const std::string& why) { fail(ErrorKind::data, "malformed history CSV: " + why); };
  std::string line;
  if (!std::getline(in, line)) bad("missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHistoryHeader) bad("unexpected header '" + line + "'");
  TrainingHistory history;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() != 5) bad("line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) + " fields");
    EpochRecord r{};
    try {
      std::size_t used = 0;
      r.epoch = std::stoul(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("epoch");
      double* targets[] = {&r.train_loss, &r.train_accuracy, &r.val_loss, &r.val_accuracy};
      for (std::size_t k = 0; k < 4; ++k) {
        *targets[k] = std::stod(fields[k + 1], &used);
        if (used != fields[k + 1].size() || !std::isfinite(*targets[k])) throw std::invalid_argument("value");
      }
    } catch (const std::exception&) {
      bad("unparsable value on line " + std::to_string(line_no));
    }
    if (r.epoch != history.records.size() + 1) bad("epochs must count up from 1 (line " + std::to_string(line_no) + ")");
    history.records.push_back(r);
  }
  if (history.records.empty()) bad("no epoch rows");
  return history;
}

// ---------------------------------------------------------------------------
// SVG accuracy plot

/// Line chart of train and validation accuracy per epoch: exactly two data
/// polylines (class "data"), axes with ticks, axis labels and a legend.
inline std::string render_accuracy_svg(const TrainingHistory& history, const std::string& title = "Accuracy per epoch") {
  if (history.records.empty()) fail_argument("cannot plot an empty history");
  constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 60;
  const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
  const std::size_t n = history.records.size();
  auto x_of = [&](std::size_t epoch) {
    return n == 1 ? kLeft + plot_w / 2 : kLeft + plot_w * static_cast<double>(epoch - 1) / static_cast<double>(n - 1);
  };
  auto y_of = [&](double acc) { return kTop + plot_h * (1.0 - std::clamp(acc, 0.0, 1.0)); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  auto escape = [](const std::string& s) {
    std::string out;
    for (char c : s) {
      switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
      }
    }
    return out;
  };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
      << "  <rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n"
      << "  <text x=\"" << num(kLeft + plot_w / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
      << escape(title) << "</text>\n";

  // Axes and ticks.
  svg << "  <g class=\"axes\" stroke=\"black\" stroke-width=\"1\">\n"
      << "    <line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w << "\" y2=\""
      << kTop + plot_h << "\"/>\n"
      << "    <line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + plot_h
      << "\"/>\n"
      << "  </g>\n  <g class=\"ticks\" font-size=\"11\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double acc = i / 5.0;
    svg << "    <text x=\"" << kLeft - 8 << "\" y=\"" << num(y_of(acc) + 4) << "\" text-anchor=\"end\">" << num(acc)
        << "</text>\n";
  }
  const std::size_t step = std::max<std::size_t>(1, n / 10);
  for (std::size_t e = 1; e <= n; e += step) {
    svg << "    <text x=\"" << num(x_of(e)) << "\" y=\"" << kTop + plot_h + 18 << "\" text-anchor=\"middle\">" << e
        << "</text>\n";
  }
  svg << "  </g>\n"
      << "  <text x=\"" << num(kLeft + plot_w / 2) << "\" y=\"" << kHeight - 15
      << "\" text-anchor=\"middle\" font-size=\"13\">Epoch</text>\n"
      << "  <text x=\"18\" y=\"" << num(kTop + plot_h / 2) << "\" text-anchor=\"middle\" font-size=\"13\" "
      << "transform=\"rotate(-90 18 " << num(kTop + plot_h / 2) << ")\">Accuracy</text>\n";

  struct Series {
    const char* name;
    const char* colour;
    double EpochRecord::*field;
  };
  const Series series[] = {{"train", "#1f77b4", &EpochRecord::train_accuracy},
                           {"validation", "#d62728", &EpochRecord::val_accuracy}};
  for (const Series& s : series) {
    svg << "  <polyline class=\"data " << s.name << "\" fill=\"none\" stroke=\"" << s.colour
        << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < n; ++i) {
      if (i) svg << ' ';
      svg << num(x_of(history.records[i].epoch)) << ',' << num(y_of(history.records[i].*(s.field)));
    }
    svg << "\"/>\n";
  }

  svg << "  <g class=\"legend\" font-size=\"12\">\n";
  double ly = kTop + 10;
  for (const Series& s : series) {
    svg << "    <line x1=\"" << kWidth - kRight + 15 << "\" y1=\"" << ly << "\" x2=\"" << kWidth - kRight + 40
        << "\" y2=\"" << ly << "\" stroke=\"" << s.colour << "\" stroke-width=\"2\"/>\n"
        << "    <text x=\"" << kWidth - kRight + 46 << "\" y=\"" << ly + 4 << "\">" << s.name << " accuracy</text>\n";
    ly += 20;
  }
  svg << "  </g>\n</svg>\n";
  return svg.str();
}

// ---------------------------------------------------------------------------
// Run manifest

/// Provenance record written next to every artifact.
struct RunManifest {
  std::string command;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::uint64_t seed = 0;
  std::string version = kVersion;
  std::string data_root;
  std::string started_at;
  std::string finished_at;
  std::optional<double> tuned_threshold;
  std::optional<double> target_sensitivity;
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::ordered_json to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["config"] = m.config;
  j["seed"] = m.seed;
  j["version"] = m.version;
  j["data_root"] = m.data_root;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["tuned_threshold"] = optional_json(m.tuned_threshold);
  j["target_sensitivity"] = optional_json(m.target_sensitivity);
  return j;
}

inline RunManifest manifest_from_json(const nlohmann::ordered_json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.version = j.at("version").get<std::string>();
    m.data_root = j.at("data_root").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    if (j.contains("tuned_threshold") && !j["tuned_threshold"].is_null()) {
      m.tuned_threshold = j["tuned_threshold"].get<double>();
    }
    if (j.contains("target_sensitivity") && !j["target_sensitivity"].is_null()) {
      m.target_sensitivity = j["target_sensitivity"].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("malformed run manifest: ") + e.what());
  }
  return m;
}

}  // namespace pxcnn

#endif  // PXCNN_REPORT_HPP_
