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

// Acceptance suite: one PASS / FAIL / SKIP line per criterion. Exits
// nonzero when any criterion fails.
//
// Set PXCNN_DATASET to a directory with NORMAL/ and PNEUMONIA/ to run the
// optional real-data check.

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "test_util.hpp"

namespace {

using namespace pxcnn;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
  enum { pass, fail, skip } status = pass;
  std::string detail;
};

Verdict check(bool ok, std::string detail) { return {ok ? Verdict::pass : Verdict::fail, std::move(detail)}; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradients against central differences

constexpr double kGradTol = 1e-4;

struct GradTally {
  std::size_t cases = 0;
  double worst = 0.0;
  std::string worst_where;

  void add(const std::string& where, double err) {
    ++cases;
    if (err > worst) {
      worst = err;
      worst_where = where;
    }
  }
};

Tensor away_from_zero(Tensor t) {
  for (double& v : t.mutable_values()) {
    if (std::abs(v) < 1e-3) v = 0.5;
  }
  return t;
}

Verdict gradient_criterion() {
  const auto start = Clock::now();
  Rng rng(101);
  GradTally tally;

  for (int i = 0; i < 20; ++i) {
    const std::size_t c = 1 + uniform_index(rng, 3), f = 1 + uniform_index(rng, 3), k = 1 + uniform_index(rng, 3);
    Tensor in = test::random_tensor({c, k + 2 + uniform_index(rng, 3), k + 2 + uniform_index(rng, 3)}, rng);
    ConvParams p{test::random_tensor({f, c, k, k}, rng), test::random_tensor({f}, rng)};
    const Tensor w = test::random_tensor(detail::conv_output_shape(in.shape(), p), rng);
    auto loss = [&] { return test::dot(conv2d_forward(in, p).output, w); };
    const ConvGrads g = conv2d_backward(conv2d_forward(in, p).cache, p, w);
    tally.add("conv input", test::max_gradient_error(loss, in, g.input));
    tally.add("conv kernels", test::max_gradient_error(loss, p.kernels, g.kernels));
    tally.add("conv bias", test::max_gradient_error(loss, p.bias, g.bias));
  }
  for (int i = 0; i < 15; ++i) {
    Tensor in = away_from_zero(test::random_tensor({2, 3, 5}, rng));
    const Tensor w = test::random_tensor(in.shape(), rng);
    auto loss = [&] { return test::dot(relu_forward(in).output, w); };
    tally.add("relu", test::max_gradient_error(loss, in, relu_backward(relu_forward(in).cache, w)));
  }
  for (int i = 0; i < 15; ++i) {
    // Continuous draws: window maxima are unique with probability 1.
    Tensor in = test::random_tensor({2, 4 + uniform_index(rng, 3), 4 + uniform_index(rng, 3)}, rng);
    const auto fwd = maxpool2_forward(in);
    const Tensor w = test::random_tensor(fwd.output.shape(), rng);
    auto loss = [&] { return test::dot(maxpool2_forward(in).output, w); };
    tally.add("maxpool", test::max_gradient_error(loss, in, maxpool2_backward(fwd.cache, w)));
  }
  for (int i = 0; i < 5; ++i) {
    Tensor in = test::random_tensor({2, 3, 3}, rng);
    const Tensor w = test::random_tensor({18}, rng);
    auto loss = [&] { return test::dot(flatten_forward(in).output, w); };
    tally.add("flatten", test::max_gradient_error(loss, in, flatten_backward(flatten_forward(in).cache, w)));
  }
  for (int i = 0; i < 20; ++i) {
    const std::size_t n_in = 1 + uniform_index(rng, 8), n_out = 1 + uniform_index(rng, 5);
    Tensor in = test::random_tensor({n_in}, rng);
    DenseParams p{test::random_tensor({n_in, n_out}, rng), test::random_tensor({n_out}, rng)};
    const Tensor w = test::random_tensor({n_out}, rng);
    auto loss = [&] { return test::dot(dense_forward(in, p).output, w); };
    const DenseGrads g = dense_backward(dense_forward(in, p).cache, p, w);
    tally.add("dense input", test::max_gradient_error(loss, in, g.input));
    tally.add("dense weights", test::max_gradient_error(loss, p.weights, g.weights));
    tally.add("dense bias", test::max_gradient_error(loss, p.bias, g.bias));
  }
  for (int i = 0; i < 10; ++i) {
    Tensor in = test::random_tensor({12}, rng);
    const std::uint64_t mask_seed = rng();
    auto run = [&] {
      Rng mask(mask_seed);
      return dropout_forward(in, 0.5, Mode::train, mask);
    };
    const Tensor w = test::random_tensor({12}, rng);
    auto loss = [&] { return test::dot(run().output, w); };
    tally.add("dropout", test::max_gradient_error(loss, in, dropout_backward(run().cache, w)));
  }
  for (int i = 0; i < 10; ++i) {
    double x = uniform(rng, -4, 4);
    const int y = i % 2;
    auto loss = [&] { return bce_loss(sigmoid(x), y).loss; };
    const double p = sigmoid(x);
    const double analytic = sigmoid_backward(p, bce_loss(p, y).grad);
    tally.add("sigmoid+bce", test::relative_error(analytic, test::central_difference(loss, x)));
  }

  ModelConfig tiny;
  tiny.height = tiny.width = 8;
  tiny.extra_layers = 1;
  tiny.kernel_size = 2;
  tiny.base_filters = 3;
  tiny.extra_filters = 4;
  tiny.dense_hidden = 6;
  tiny.dropout_rate = 0.0;
  for (int i = 0; i < 20; ++i) {
    Model m = build_model(tiny, 500 + static_cast<std::uint64_t>(i));
    test::randomize_biases(m, rng);
    Tensor image = test::random_tensor({1, 8, 8}, rng, 0, 1);
    const int label = i % 2;
    auto loss = [&] { return bce_loss(forward(m, image, Mode::infer).probability, label).loss; };
    const Trace trace = forward(m, image, Mode::infer);
    const std::vector<Tensor> grads = backward(m, trace, bce_loss(trace.probability, label).grad);
    auto params = m.parameters();
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
      const std::size_t t = uniform_index(rng, params.size());
      const std::size_t e = uniform_index(rng, params[t]->size());
      worst = std::max(worst, test::relative_error(grads[t][e], test::central_difference(loss, (*params[t])[e])));
    }
    tally.add("end-to-end", worst);
  }

  const double elapsed = seconds_since(start);
  const bool ok = tally.cases >= 100 && tally.worst < kGradTol && elapsed < 60.0;
  return check(ok, std::to_string(tally.cases) + " cases, worst relative error " + fmt("%.2e", tally.worst) + " (" +
                       tally.worst_where + "), " + fmt("%.1f", elapsed) + " s");
}

// ---------------------------------------------------------------------------
// 2. Brute-force oracles

Verdict oracle_criterion() {
  Rng rng(202);
  std::size_t conv = 0, pool = 0, mm = 0, conf = 0, mismatches = 0;
  for (int i = 0; i < 250; ++i) {
    const std::size_t c = 1 + uniform_index(rng, 3), f = 1 + uniform_index(rng, 4), k = 1 + uniform_index(rng, 4);
    const Tensor in = test::random_tensor({c, k + uniform_index(rng, 6), k + uniform_index(rng, 6)}, rng);
    const ConvParams p{test::random_tensor({f, c, k, k}, rng), test::random_tensor({f}, rng)};
    mismatches += !(conv2d_forward(in, p).output == test::naive_conv(in, p.kernels, p.bias));
    ++conv;
  }
  for (int i = 0; i < 250; ++i) {
    Tensor in = test::random_tensor({1 + uniform_index(rng, 3), 2 + uniform_index(rng, 7), 2 + uniform_index(rng, 7)}, rng);
    // Quantised values make ties frequent.
    if (i % 2) {
      for (double& v : in.mutable_values()) v = std::round(v * 2.0);
    }
    mismatches += !(maxpool2_forward(in).output == test::naive_maxpool(in));
    ++pool;
  }
  for (int i = 0; i < 250; ++i) {
    const std::size_t m = 1 + uniform_index(rng, 6), k = 1 + uniform_index(rng, 6), n = 1 + uniform_index(rng, 6);
    const Tensor a = test::random_tensor({m, k}, rng), b = test::random_tensor({k, n}, rng);
    mismatches += !(matmul(a, b) == test::naive_matmul(a, b));
    ++mm;
  }
  for (int i = 0; i < 250; ++i) {
    const std::size_t n = 1 + uniform_index(rng, 100);
    std::vector<double> p(n);
    std::vector<int> y(n);
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = static_cast<double>(uniform_index(rng, 11)) / 10.0;
      y[j] = static_cast<int>(uniform_index(rng, 2));
    }
    const double t = static_cast<double>(uniform_index(rng, 11)) / 10.0;
    mismatches += !(confusion(p, y, t) == test::naive_confusion(p, y, t));
    ++conf;
  }
  const bool ok = mismatches == 0 && std::min({conv, pool, mm, conf}) >= 200;
  return check(ok, "conv " + std::to_string(conv) + ", maxpool " + std::to_string(pool) + ", matmul " +
                       std::to_string(mm) + ", confusion " + std::to_string(conf) + " instances; " +
                       std::to_string(mismatches) + " mismatches");
}

// ---------------------------------------------------------------------------
// 3. Metric identities

Verdict metrics_criterion() {
  Rng rng(303);
  std::size_t violations = 0, matrices = 0, tunings = 0;
  for (int i = 0; i < 2000; ++i) {
    const ConfusionMatrix cm{uniform_index(rng, 100), uniform_index(rng, 100), uniform_index(rng, 100),
                             1 + uniform_index(rng, 100)};
    const MetricsReport r = compute_metrics(cm);
    const double product = *r.accuracy * static_cast<double>(r.n);
    violations += static_cast<std::size_t>(std::llround(product)) != cm.tp + cm.tn;
    if (r.f1) {
      violations += *r.f1 < std::min(*r.precision, *r.recall) - 1e-15;
      violations += *r.f1 > std::max(*r.precision, *r.recall) + 1e-15;
    }
    ++matrices;
  }
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = 1 + uniform_index(rng, 60);
    std::vector<double> p(n);
    std::vector<int> y(n);
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = i % 2 ? uniform01(rng) : static_cast<double>(uniform_index(rng, 21)) / 20.0;
      y[j] = static_cast<int>(uniform_index(rng, 2));
    }
    y[0] = 1;
    const double target = uniform(rng, 0.01, 1.0);
    const MetricsReport r = tune_threshold(p, y, target);
    violations += *r.sensitivity < target;
    violations += test::oracle_tune(p, y, target) != r.threshold;
    for (double c : p) {
      if (c <= r.threshold) continue;
      const ConfusionMatrix cm = test::naive_confusion(p, y, c);
      violations += static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn) >= target;
    }
    ++tunings;
  }
  return check(violations == 0, std::to_string(matrices) + " matrices, " + std::to_string(tunings) +
                                    " tunings checked by enumeration; " + std::to_string(violations) + " violations");
}

// ---------------------------------------------------------------------------
// 4. Synthetic end to end

Verdict synthetic_criterion() {
  const auto start = Clock::now();
  SyntheticSpec spec;
  spec.count = 250;
  spec.size = 32;
  spec.seed = 7;
  const auto samples = generate_blobs(spec);
  const auto data = split(std::span<const Sample>(samples), 0.8, 7);
  ModelConfig mc;
  mc.height = mc.width = 32;
  mc.extra_layers = 1;
  TrainConfig tc;
  tc.epochs = 5;
  tc.batch_size = 16;
  tc.seed = 7;
  const TrainResult trained = train(build_model(mc, 7), data.train, data.test, tc);
  const Evaluation ev = evaluate(trained.model, data.test);
  std::vector<int> labels;
  for (const auto& s : data.test) labels.push_back(s.label);
  const double accuracy = *compute_metrics(confusion(ev.probabilities, labels, 0.5)).accuracy;
  const MetricsReport tuned = tune_threshold(ev.probabilities, labels, 0.90);
  const double elapsed = seconds_since(start);
  const std::size_t positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));

  const bool ok = accuracy >= 0.95 && *tuned.sensitivity >= 0.95 && elapsed < 120.0;
  return check(ok, "test accuracy " + fmt("%.4f", accuracy) + " (need >= 0.95), tuned sensitivity " +
                       fmt("%.4f", *tuned.sensitivity) + " at target 0.90 over " + std::to_string(positives) +
                       " positives (need >= 0.95), " + fmt("%.1f", elapsed) + " s");
}

// ---------------------------------------------------------------------------
// 5. Overfit detector

Verdict overfit_criterion() {
  auto history = [](std::vector<double> tr, std::vector<double> va) {
    TrainingHistory h;
    for (std::size_t i = 0; i < tr.size(); ++i) h.records.push_back({i + 1, 0.0, tr[i], 0.0, va[i]});
    return h;
  };
  const OverfitReport divergent =
      detect_overfit(history({0.6, 0.7, 0.8, 0.9, 0.95}, {0.6, 0.68, 0.67, 0.66, 0.65}));
  const OverfitReport rising = detect_overfit(history({0.6, 0.7, 0.8, 0.85, 0.9}, {0.58, 0.68, 0.77, 0.83, 0.88}));
  const bool ok = divergent.flagged && divergent.first_flag_epoch == std::optional<std::size_t>(4) && !rising.flagged;
  return check(ok, std::string("divergent: ") + (divergent.flagged ? "flagged at epoch " +
                                                                         std::to_string(*divergent.first_flag_epoch)
                                                                   : "not flagged") +
                       "; jointly rising: " + (rising.flagged ? "flagged" : "not flagged"));
}

// ---------------------------------------------------------------------------
// 6. CLI determinism

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PXCNN_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict determinism_criterion() {
  const auto dir = test::temp_dir("acceptance_cli");
  const std::string train = "train --synthetic --synthetic-count 60 --synthetic-size 24 --extra-layers 1 --epochs 2 "
                            "--batch 8 --seed 13 --out ";
  const auto a = dir / "a.bin", b = dir / "b.bin";
  if (run_cli(train + a.string()) != 0 || run_cli(train + b.string()) != 0) return check(false, "train failed");
  const bool same_ckpt = slurp(a) == slurp(b) && !slurp(a).empty();
  const bool same_csv = slurp(a.string() + ".history.csv") == slurp(b.string() + ".history.csv");

  const std::string sweep = "sweep --synthetic --synthetic-count 60 --synthetic-size 24 --layers 1,2 --epochs 1,2 "
                            "--repeats 2 --batch 8 --seed 5 --out ";
  const auto j1 = dir / "jobs1.json", j4 = dir / "jobs4.json";
  if (run_cli(sweep + j1.string() + " --jobs 1") != 0 || run_cli(sweep + j4.string() + " --jobs 4") != 0) {
    return check(false, "sweep failed");
  }
  const bool same_sweep = slurp(j1) == slurp(j4) && !slurp(j1).empty();
  return check(same_ckpt && same_csv && same_sweep,
               std::string("checkpoints ") + (same_ckpt ? "identical" : "differ") + ", history CSVs " +
                   (same_csv ? "identical" : "differ") + ", sweep --jobs 1 vs 4 " +
                   (same_sweep ? "identical" : "differ"));
}

// ---------------------------------------------------------------------------
// 7. Checkpoint round trip

Verdict checkpoint_criterion() {
  ModelConfig mc;
  mc.height = mc.width = 32;
  mc.extra_layers = 1;
  const Model model = build_model(mc, 77);
  const auto path = test::temp_dir("acceptance_ckpt") / "m.bin";
  save_checkpoint(model, path);
  const Model back = load_checkpoint(path);
  Rng rng(707);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Tensor img = test::random_tensor({1, 32, 32}, rng, 0, 1);
    worst = std::max(worst, std::abs(predict_proba(model, img) - predict_proba(back, img)));
  }
  return check(worst <= 1e-15, "50 inputs, max |difference| " + fmt("%.3g", worst));
}

// ---------------------------------------------------------------------------
// 8. Optional real dataset

Verdict dataset_criterion() {
  const char* root = std::getenv("PXCNN_DATASET");
  if (!root || !std::filesystem::is_directory(std::filesystem::path(root) / "NORMAL") ||
      !std::filesystem::is_directory(std::filesystem::path(root) / "PNEUMONIA")) {
    return {Verdict::skip, "PXCNN_DATASET not set or not a NORMAL/PNEUMONIA layout"};
  }
  const DatasetManifest manifest = scan_dataset(root);
  const Split parts = split(manifest, 0.8, 0);
  SplitOf<Sample> data;
  data.train = load_samples(parts.train, 150, 150);
  data.test = load_samples(parts.test, 150, 150);
  SweepGrid grid;
  grid.extra_layers = {2};
  grid.epochs = {5};
  grid.repeats = 5;
  TrialSetup setup;
  setup.train.augment = AugmentPlan{};
  setup.train.threads = std::max(1u, std::thread::hardware_concurrency());
  const SweepReport report = sweep(grid, data, setup, 1);
  const CellSummary& cell = report.cells.at(0);
  const double sens = cell.stat("sensitivity").mean.value_or(0.0);
  const double acc = cell.stat("accuracy").mean.value_or(0.0);
  return check(!cell.failed && sens >= 0.80 && acc >= 0.70,
               "cell (2, 5) x 5: mean tuned sensitivity " + fmt("%.4f", sens) + " (need >= 0.80), mean accuracy " +
                   fmt("%.4f", acc) + " (need >= 0.70)");
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    Verdict (*run)();
  };
  const Criterion criteria[] = {
      {"gradient correctness", gradient_criterion},
      {"oracle equivalence", oracle_criterion},
      {"metrics identities", metrics_criterion},
      {"synthetic end-to-end", synthetic_criterion},
      {"overfit detector", overfit_criterion},
      {"determinism", determinism_criterion},
      {"checkpoint round trip", checkpoint_criterion},
      {"real-dataset envelope", dataset_criterion},
  };
  int failures = 0;
  int index = 0;
  for (const Criterion& c : criteria) {
    ++index;
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {Verdict::fail, std::string("exception: ") + e.what()};
    }
    const char* label = v.status == Verdict::pass ? "PASS" : v.status == Verdict::fail ? "FAIL" : "SKIP";
    failures += v.status == Verdict::fail;
    std::printf("%s %d %s: %s\n", label, index, c.name, v.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
