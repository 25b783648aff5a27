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

// pxcnn command-line tool: train, eval, tune, predict, sweep, plot.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 usage, 3 data, 4 training,
// 5 checkpoint. Standard output carries only each command's payload;
// progress and warnings go to standard error.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pxcnn/pxcnn.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kDataError = 3,
  kTrainingError = 4,
  kCheckpointError = 5,
};

int exit_code_for(pxcnn::ErrorKind kind) {
  switch (kind) {
    case pxcnn::ErrorKind::invalid_argument: return kUsage;
    case pxcnn::ErrorKind::data: return kDataError;
    case pxcnn::ErrorKind::training: return kTrainingError;
    case pxcnn::ErrorKind::checkpoint: return kCheckpointError;
  }
  return kUnexpected;
}

/// Where the samples come from and how they are split.
struct DataOptions {
  std::string data_dir;
  bool synthetic = false;
  std::size_t synthetic_count = 250;
  std::size_t synthetic_size = 32;
  std::size_t image_size = 150;
  double ratio = 0.8;
  bool all = false;

  void add_to(CLI::App& cmd, bool with_all) {
    cmd.add_option("--data", data_dir, "Dataset root with NORMAL/ and PNEUMONIA/ subdirectories");
    cmd.add_flag("--synthetic", synthetic, "Use the built-in synthetic blob dataset");
    cmd.add_option("--synthetic-count", synthetic_count, "Synthetic image count")->capture_default_str();
    cmd.add_option("--synthetic-size", synthetic_size, "Synthetic image side length")->capture_default_str();
    cmd.add_option("--image-size", image_size, "Side length images are resized to")->capture_default_str();
    cmd.add_option("--ratio", ratio, "Training fraction of the stratified split")->capture_default_str();
    if (with_all) cmd.add_flag("--all", all, "Evaluate every image instead of the test portion");
  }

  void check() const {
    if (synthetic == !data_dir.empty()) throw CLI::ValidationError("exactly one of --data or --synthetic is required");
  }

  ordered_json to_json() const {
    ordered_json j;
    j["source"] = synthetic ? "synthetic" : "directory";
    if (synthetic) {
      j["synthetic_count"] = synthetic_count;
      j["synthetic_size"] = synthetic_size;
    } else {
      j["root"] = fs::absolute(data_dir).string();
      j["image_size"] = image_size;
    }
    j["ratio"] = ratio;
    return j;
  }
};

struct LoadedData {
  pxcnn::SplitOf<pxcnn::Sample> split;
  std::size_t side = 0;
};

LoadedData load_data(const DataOptions& opt, std::uint64_t seed) {
  LoadedData out;
  if (opt.synthetic) {
    pxcnn::SyntheticSpec spec;
    spec.count = opt.synthetic_count;
    spec.size = opt.synthetic_size;
    spec.seed = seed;
    const auto samples = pxcnn::generate_blobs(spec);
    out.split = pxcnn::split(std::span<const pxcnn::Sample>(samples), opt.ratio, seed);
    out.side = spec.size;
    std::cerr << "synthetic data: " << samples.size() << " images of " << spec.size << "x" << spec.size << "\n";
    return out;
  }
  const pxcnn::DatasetManifest manifest = pxcnn::scan_dataset(opt.data_dir);
  for (const auto& w : manifest.warnings) std::cerr << "warning: skipped " << w << "\n";
  std::cerr << "dataset: " << manifest.normal_count << " NORMAL, " << manifest.pneumonia_count << " PNEUMONIA\n";
  const pxcnn::Split parts = pxcnn::split(manifest, opt.ratio, seed);
  out.split.ratio = parts.ratio;
  out.split.seed = parts.seed;
  out.split.train = pxcnn::load_samples(parts.train, opt.image_size, opt.image_size);
  out.split.test = pxcnn::load_samples(parts.test, opt.image_size, opt.image_size);
  out.side = opt.image_size;
  return out;
}

/// The set cmd_eval/cmd_tune score: the test portion or, with --all, everything.
std::vector<pxcnn::Sample> evaluation_set(const DataOptions& opt, std::uint64_t seed) {
  LoadedData data = load_data(opt, seed);
  std::vector<pxcnn::Sample> samples = std::move(data.split.test);
  if (opt.all) samples.insert(samples.end(), data.split.train.begin(), data.split.train.end());
  return samples;
}

fs::path manifest_path(const fs::path& artifact) { return artifact.string() + ".manifest.json"; }

std::optional<pxcnn::RunManifest> read_manifest(const fs::path& artifact) {
  std::ifstream in(manifest_path(artifact));
  if (!in) return std::nullopt;
  try {
    return pxcnn::manifest_from_json(ordered_json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    pxcnn::fail(pxcnn::ErrorKind::data, std::string("malformed run manifest: ") + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) pxcnn::fail(pxcnn::ErrorKind::data, "cannot write " + path.string());
}

void write_manifest(const fs::path& artifact, const pxcnn::RunManifest& m) {
  write_text(manifest_path(artifact), pxcnn::to_json(m).dump(2) + "\n");
}

ordered_json train_config_json(const pxcnn::TrainConfig& tc) {
  ordered_json j;
  j["epochs"] = tc.epochs;
  j["batch_size"] = tc.batch_size;
  j["learning_rate"] = tc.learning_rate;
  j["beta1"] = tc.beta1;
  j["beta2"] = tc.beta2;
  j["epsilon"] = tc.epsilon;
  j["augment_copies"] = tc.augment ? tc.augment->copies : 0;
  if (tc.augment) {
    j["augment_rotation_deg"] = tc.augment->max_rotation_deg;
    j["augment_min_scale"] = tc.augment->min_scale;
    j["augment_max_scale"] = tc.augment->max_scale;
  }
  return j;
}

std::vector<int> labels_of(const std::vector<pxcnn::Sample>& samples) {
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  return labels;
}

void check_image_size(const pxcnn::ModelConfig& config, std::size_t side) {
  if (config.height != side || config.width != side) {
    pxcnn::fail(pxcnn::ErrorKind::data, "data image size " + std::to_string(side) + " does not match the model input " +
                                            std::to_string(config.height) + "x" + std::to_string(config.width));
  }
}

/// Seed defaults for eval/tune: explicit flag, else the training manifest, else PXCNN_SEED/0.
std::uint64_t resolve_seed(const CLI::Option* flag, std::uint64_t value, const std::optional<pxcnn::RunManifest>& m) {
  if (flag->count() > 0 || !m) return value;
  return m->seed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pxcnn: train, evaluate and tune a small CNN for chest x-ray pneumonia classification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", pxcnn::kVersion);


  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model and write checkpoint, history and manifest");
  DataOptions train_data;
  train_data.add_to(*train_cmd, false);
  std::size_t extra_layers = 2, epochs = 5, batch = 32, augment_copies = 1, threads = 1;
  double lr = 1e-3;
  std::uint64_t train_seed = 0;
  std::string train_out;
  train_cmd->add_option("--extra-layers", extra_layers, "Number of Conv(64)-ReLU-MaxPool blocks")->capture_default_str();
  train_cmd->add_option("--epochs", epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--seed", train_seed, "Run seed")->envname("PXCNN_SEED")->capture_default_str();
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();
  train_cmd->add_option("--batch", batch, "Mini-batch size")->capture_default_str();
  train_cmd->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--augment-copies", augment_copies, "Augmented resamples per image per epoch")
      ->capture_default_str();
  train_cmd->add_option("--threads", threads, "Worker threads within a batch")->capture_default_str();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Print the metrics report of a checkpoint");
  DataOptions eval_data;
  eval_data.add_to(*eval_cmd, true);
  std::string eval_model;
  double eval_threshold = 0.5;
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("--model", eval_model, "Checkpoint path")->required();
  eval_cmd->add_option("--threshold", eval_threshold, "Decision threshold")->capture_default_str();
  auto* eval_seed_opt = eval_cmd->add_option("--seed", eval_seed, "Split seed (default: from the run manifest)")
                            ->envname("PXCNN_SEED");

  // tune
  auto* tune_cmd = app.add_subcommand("tune", "Choose the threshold that reaches a target sensitivity");
  DataOptions tune_data;
  tune_data.add_to(*tune_cmd, true);
  std::string tune_model;
  double tune_target = 0.9;
  std::uint64_t tune_seed = 0;
  tune_cmd->add_option("--model", tune_model, "Checkpoint path")->required();
  tune_cmd->add_option("--target-sensitivity", tune_target, "Sensitivity to reach")->capture_default_str();
  auto* tune_seed_opt = tune_cmd->add_option("--seed", tune_seed, "Split seed (default: from the run manifest)")
                            ->envname("PXCNN_SEED");

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Classify one image");
  std::string predict_model, predict_image;
  double predict_threshold = 0.5;
  predict_cmd->add_option("--model", predict_model, "Checkpoint path")->required();
  predict_cmd->add_option("--image", predict_image, "Image file (PNG, JPEG or PGM)")->required();
  auto* predict_threshold_opt =
      predict_cmd->add_option("--threshold", predict_threshold, "Decision threshold (default: tuned, else 0.5)");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid sweep over extra layers and epochs with repeated trials");
  DataOptions sweep_data;
  sweep_data.add_to(*sweep_cmd, false);
  pxcnn::SweepGrid grid;
  std::string sweep_out;
  std::size_t jobs = 1, sweep_batch = 32, sweep_augment = 1, sweep_threads = 1;
  double sweep_lr = 1e-3;
  sweep_cmd->add_option("--layers", grid.extra_layers, "Extra-layer counts")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--epochs", grid.epochs, "Epoch counts")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--repeats", grid.repeats, "Seeded trials per cell")->capture_default_str();
  sweep_cmd->add_option("--target-sensitivity", grid.target_sensitivity, "Sensitivity target")->capture_default_str();
  sweep_cmd->add_option("--seed", grid.base_seed, "Base seed")->envname("PXCNN_SEED")->capture_default_str();
  sweep_cmd->add_option("--out", sweep_out, "Report path")->required();
  sweep_cmd->add_option("--jobs", jobs, "Concurrent trials")->capture_default_str();
  sweep_cmd->add_option("--batch", sweep_batch, "Mini-batch size")->capture_default_str();
  sweep_cmd->add_option("--lr", sweep_lr, "Adam learning rate")->capture_default_str();
  sweep_cmd->add_option("--augment-copies", sweep_augment, "Augmented resamples per image per epoch")
      ->capture_default_str();
  sweep_cmd->add_option("--threads", sweep_threads, "Worker threads within a batch")->capture_default_str();

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "Render a history CSV as an SVG accuracy chart");
  std::string plot_history, plot_out;
  plot_cmd->add_option("--history", plot_history, "History CSV")->required();
  plot_cmd->add_option("--out", plot_out, "SVG output path")->required();

  try {
    app.parse(argc, argv);
    if (train_cmd->parsed()) train_data.check();
    if (eval_cmd->parsed()) eval_data.check();
    if (tune_cmd->parsed()) tune_data.check();
    if (sweep_cmd->parsed()) sweep_data.check();
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (train_cmd->parsed()) {
      pxcnn::RunManifest manifest;
      manifest.command = "train";
      manifest.started_at = pxcnn::utc_timestamp();
      manifest.seed = train_seed;
      manifest.data_root = train_data.synthetic ? "synthetic" : fs::absolute(train_data.data_dir).string();

      const LoadedData data = load_data(train_data, train_seed);
      pxcnn::ModelConfig mc;
      mc.height = mc.width = data.side;
      mc.extra_layers = extra_layers;
      pxcnn::TrainConfig tc;
      tc.epochs = epochs;
      tc.batch_size = batch;
      tc.learning_rate = lr;
      tc.seed = train_seed;
      tc.threads = threads;
      if (augment_copies > 0) {
        pxcnn::AugmentPlan plan;
        plan.copies = static_cast<int>(augment_copies);
        plan.seed = train_seed;
        tc.augment = plan;
      }
      const pxcnn::Model model = pxcnn::build_model(mc, train_seed);
      std::cerr << "model: " << pxcnn::parameter_count(mc) << " parameters, feature map "
                << pxcnn::shape_string(pxcnn::feature_shape(mc)) << "\n";
      const pxcnn::TrainResult result =
          pxcnn::train(model, data.split.train, data.split.test, tc, [&](const pxcnn::EpochRecord& r) {
            std::cerr << "epoch " << r.epoch << "/" << tc.epochs << " train_loss=" << r.train_loss
                      << " train_acc=" << r.train_accuracy << " val_loss=" << r.val_loss
                      << " val_acc=" << r.val_accuracy << "\n";
          });

      pxcnn::save_checkpoint(result.model, fs::path(train_out));
      std::ostringstream csv;
      pxcnn::write_history_csv(result.history, csv);
      write_text(train_out + ".history.csv", csv.str());
      manifest.config["model"] = nlohmann::json(mc);
      manifest.config["train"] = train_config_json(tc);
      manifest.config["data"] = train_data.to_json();
      manifest.finished_at = pxcnn::utc_timestamp();
      write_manifest(train_out, manifest);

      const pxcnn::EpochRecord& last = result.history.records.back();
      std::printf("epoch=%zu train_loss=%.6f train_acc=%.6f val_loss=%.6f val_acc=%.6f\n", last.epoch,
                  last.train_loss, last.train_accuracy, last.val_loss, last.val_accuracy);
      return kOk;
    }

    if (eval_cmd->parsed() || tune_cmd->parsed()) {
      const bool tuning = tune_cmd->parsed();
      const std::string& model_path = tuning ? tune_model : eval_model;
      const DataOptions& opt = tuning ? tune_data : eval_data;
      const pxcnn::Model model = pxcnn::load_checkpoint(fs::path(model_path));
      auto manifest = read_manifest(model_path);
      const std::uint64_t seed = tuning ? resolve_seed(tune_seed_opt, tune_seed, manifest)
                                        : resolve_seed(eval_seed_opt, eval_seed, manifest);
      DataOptions resolved = opt;
      if (!opt.synthetic) resolved.image_size = model.config.height;
      const std::vector<pxcnn::Sample> samples = evaluation_set(resolved, seed);
      if (!samples.empty()) check_image_size(model.config, samples.front().image.dim(1));
      const pxcnn::Evaluation ev = pxcnn::evaluate(model, samples);
      const std::vector<int> labels = labels_of(samples);

      pxcnn::MetricsReport report;
      if (tuning) {
        report = pxcnn::tune_threshold(ev.probabilities, labels, tune_target);
        if (!manifest) {
          manifest = pxcnn::RunManifest{};
          manifest->command = "tune";
          manifest->seed = seed;
          manifest->started_at = pxcnn::utc_timestamp();
        }
        manifest->tuned_threshold = report.threshold;
        manifest->target_sensitivity = tune_target;
        manifest->finished_at = pxcnn::utc_timestamp();
        write_manifest(model_path, *manifest);
      } else {
        if (!(eval_threshold >= 0.0 && eval_threshold <= 1.0)) {
          pxcnn::fail_argument("--threshold must lie in [0, 1]");
        }
        report = pxcnn::compute_metrics(pxcnn::confusion(ev.probabilities, labels, eval_threshold), eval_threshold);
      }
      std::cout << pxcnn::to_json(report).dump(2) << "\n";
      return kOk;
    }

    if (predict_cmd->parsed()) {
      const pxcnn::Model model = pxcnn::load_checkpoint(fs::path(predict_model));
      double threshold = predict_threshold;
      if (predict_threshold_opt->count() == 0) {
        const auto manifest = read_manifest(predict_model);
        if (manifest && manifest->tuned_threshold) {
          threshold = *manifest->tuned_threshold;
          std::cerr << "using tuned threshold " << threshold << "\n";
        }
      }
      const pxcnn::Tensor image = pxcnn::load_image(predict_image, model.config.height, model.config.width);
      const double p = pxcnn::predict_proba(model, image);
      const bool positive = pxcnn::classify(p, threshold) == pxcnn::Diagnosis::positive;
      std::printf("%.6f,%s\n", p, positive ? "POSITIVE" : "NEGATIVE");
      return kOk;
    }

    if (sweep_cmd->parsed()) {
      pxcnn::RunManifest manifest;
      manifest.command = "sweep";
      manifest.started_at = pxcnn::utc_timestamp();
      manifest.seed = grid.base_seed;
      manifest.data_root = sweep_data.synthetic ? "synthetic" : fs::absolute(sweep_data.data_dir).string();

      pxcnn::validate(grid);
      const LoadedData data = load_data(sweep_data, grid.base_seed);
      pxcnn::TrialSetup setup;
      setup.model.height = setup.model.width = data.side;
      setup.train.batch_size = sweep_batch;
      setup.train.learning_rate = sweep_lr;
      setup.train.threads = sweep_threads;
      if (sweep_augment > 0) {
        pxcnn::AugmentPlan plan;
        plan.copies = static_cast<int>(sweep_augment);
        setup.train.augment = plan;
      }
      const pxcnn::SweepReport report =
          pxcnn::sweep(grid, data.split, setup, jobs, [](const pxcnn::Cell& c, std::uint64_t seed, const std::string& err) {
            std::cerr << "trial extra_layers=" << c.extra_layers << " epochs=" << c.epochs << " seed=" << seed
                      << (err.empty() ? " done" : " failed: " + err) << "\n";
          });
      write_text(sweep_out, pxcnn::to_json(report).dump(2) + "\n");

      ordered_json cfg;
      cfg["layers"] = grid.extra_layers;
      cfg["epochs"] = grid.epochs;
      cfg["repeats"] = grid.repeats;
      cfg["target_sensitivity"] = grid.target_sensitivity;
      cfg["model"] = nlohmann::json(setup.model);
      cfg["train"] = train_config_json(setup.train);
      cfg["data"] = sweep_data.to_json();
      manifest.config = cfg;
      manifest.target_sensitivity = grid.target_sensitivity;
      manifest.finished_at = pxcnn::utc_timestamp();
      write_manifest(sweep_out, manifest);

      const bool all_failed =
          std::all_of(report.cells.begin(), report.cells.end(), [](const pxcnn::CellSummary& c) { return c.failed; });
      if (all_failed) {
        std::cerr << "error: every sweep cell failed\n";
        return kTrainingError;
      }
      if (report.best_cell) {
        std::printf("best_cell extra_layers=%zu epochs=%zu\n", report.best_cell->extra_layers,
                    report.best_cell->epochs);
      } else {
        std::printf("best_cell none\n");
      }
      return kOk;
    }

    if (plot_cmd->parsed()) {
      std::ifstream in(plot_history);
      if (!in) pxcnn::fail(pxcnn::ErrorKind::data, "cannot open " + plot_history);
      const pxcnn::TrainingHistory history = pxcnn::read_history_csv(in);
      write_text(plot_out, pxcnn::render_accuracy_svg(history));
      return kOk;
    }
  } catch (const pxcnn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kUsage;
}
