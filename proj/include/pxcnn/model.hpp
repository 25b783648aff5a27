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

#ifndef PXCNN_MODEL_HPP_
#define PXCNN_MODEL_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "pxcnn/data.hpp"
#include "pxcnn/error.hpp"
#include "pxcnn/image.hpp"
#include "pxcnn/layers.hpp"
#include "pxcnn/random.hpp"
#include "pxcnn/tensor.hpp"

namespace pxcnn {

/// Architecture hyperparameters. The network is
///   Conv(base_filters) -> ReLU -> MaxPool
///   extra_layers x [Conv(extra_filters) -> ReLU -> MaxPool]
///   Flatten -> Dense(dense_hidden) -> ReLU -> Dropout -> Dense(1) -> Sigmoid
struct ModelConfig {
  std::size_t height = 150;
  std::size_t width = 150;
  std::size_t channels = 1;
  std::size_t extra_layers = 2;
  std::size_t base_filters = 32;
  std::size_t extra_filters = 64;
  std::size_t kernel_size = 3;
  double dropout_rate = 0.5;
  std::size_t dense_hidden = 64;
  std::size_t output_units = 1;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ModelConfig, height, width, channels, extra_layers, base_filters,
                                   extra_filters, kernel_size, dropout_rate, dense_hidden, output_units)

inline void validate(const ModelConfig& c) {
  if (c.height == 0 || c.width == 0 || c.channels == 0) fail_argument("model input size must be positive");
  if (c.base_filters == 0 || c.extra_filters == 0 || c.dense_hidden == 0 || c.kernel_size == 0) {
    fail_argument("model filter counts, kernel size and dense width must be positive");
  }
  if (c.output_units != 1) fail_argument("only a single sigmoid output unit is supported");
  validate_dropout_rate(c.dropout_rate);
}

/// Shape of the conv stack output that feeds Flatten. Throws a training
/// error naming the first stage whose output would be too small.
inline Shape feature_shape(const ModelConfig& c) {
  validate(c);
  std::size_t h = c.height, w = c.width, ch = c.channels;
  for (std::size_t block = 0; block <= c.extra_layers; ++block) {
    const std::size_t filters = block == 0 ? c.base_filters : c.extra_filters;
    const std::string name = block == 0 ? "initial block" : "extra block " + std::to_string(block);
    if (h < c.kernel_size || w < c.kernel_size) {
      fail(ErrorKind::training, "spatial collapse at " + name + " conv: input " + std::to_string(h) + "x" +
                                    std::to_string(w) + " is smaller than the " + std::to_string(c.kernel_size) +
                                    "x" + std::to_string(c.kernel_size) + " kernel");
    }
    h = h - c.kernel_size + 1;
    w = w - c.kernel_size + 1;
    if (h < 2 || w < 2) {
      fail(ErrorKind::training, "spatial collapse at " + name + " maxpool: input " + std::to_string(h) + "x" +
                                    std::to_string(w) + " is smaller than the 2x2 window");
    }
    h /= 2;
    w /= 2;
    ch = filters;
  }
  return {ch, h, w};
}

inline std::size_t parameter_count(const ModelConfig& c) {
  const Shape feat = feature_shape(c);
  const std::size_t k2 = c.kernel_size * c.kernel_size;
  std::size_t n = c.base_filters * (c.channels * k2 + 1);
  if (c.extra_layers > 0) {
    n += c.extra_filters * (c.base_filters * k2 + 1);
    n += (c.extra_layers - 1) * c.extra_filters * (c.extra_filters * k2 + 1);
  }
  n += (shape_product(feat) + 1) * c.dense_hidden;
  n += (c.dense_hidden + 1) * c.output_units;
  return n;
}

struct ConvLayer {
  ConvParams params;
};
struct ReluLayer {};
struct MaxPoolLayer {};
struct FlattenLayer {};
struct DenseLayer {
  DenseParams params;
};
struct DropoutLayer {
  double rate;
};

using Layer = std::variant<ConvLayer, ReluLayer, MaxPoolLayer, FlattenLayer, DenseLayer, DropoutLayer>;

/// Sequential network; the sigmoid head is applied after the last layer.
struct Model {
  ModelConfig config;
  std::vector<Layer> layers;

  /// Parameter tensors in layer order (kernels then bias for each conv,
  /// weights then bias for each dense layer).
  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (Layer& layer : layers) {
      if (auto* conv = std::get_if<ConvLayer>(&layer)) {
        out.push_back(&conv->params.kernels);
        out.push_back(&conv->params.bias);
      } else if (auto* dense = std::get_if<DenseLayer>(&layer)) {
        out.push_back(&dense->params.weights);
        out.push_back(&dense->params.bias);
      }
    }
    return out;
  }

  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    for (Tensor* t : const_cast<Model*>(this)->parameters()) out.push_back(t);
    return out;
  }
};

template <typename... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <typename... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

inline Model build_model(const ModelConfig& config, Rng& rng) {
  const Shape feat = feature_shape(config);
  Model model{config, {}};
  std::size_t in_channels = config.channels;
  for (std::size_t block = 0; block <= config.extra_layers; ++block) {
    const std::size_t filters = block == 0 ? config.base_filters : config.extra_filters;
    model.layers.emplace_back(ConvLayer{he_uniform_conv(filters, in_channels, config.kernel_size, rng)});
    model.layers.emplace_back(ReluLayer{});
    model.layers.emplace_back(MaxPoolLayer{});
    in_channels = filters;
  }
  model.layers.emplace_back(FlattenLayer{});
  model.layers.emplace_back(DenseLayer{he_uniform_dense(shape_product(feat), config.dense_hidden, rng)});
  model.layers.emplace_back(ReluLayer{});
  model.layers.emplace_back(DropoutLayer{config.dropout_rate});
  model.layers.emplace_back(DenseLayer{he_uniform_dense(config.dense_hidden, config.output_units, rng)});
  return model;
}

inline Model build_model(const ModelConfig& config, std::uint64_t seed) {
  Rng rng = make_rng(seed, {kInitStream});
  return build_model(config, rng);
}

// ---------------------------------------------------------------------------
// Forward / backward over the whole network

struct Trace {
  std::vector<LayerCache> caches;
  double probability = 0.5;
};

/// Forward pass of one image. `dropout_rng` is only drawn from in training mode.
inline Trace forward(const Model& model, const Tensor& image, Mode mode, Rng* dropout_rng = nullptr) {
  const ModelConfig& c = model.config;
  if (image.shape() != Shape{c.channels, c.height, c.width}) {
    fail_argument("image shape " + shape_string(image.shape()) + " does not match model input " +
                  shape_string({c.channels, c.height, c.width}));
  }
  if (mode == Mode::train && dropout_rng == nullptr) fail_argument("training-mode forward needs a dropout rng");
  Trace trace;
  trace.caches.reserve(model.layers.size());
  Tensor x = image;
  for (const Layer& layer : model.layers) {
    auto step = [&](auto&& fwd) {
      x = std::move(fwd.output);
      trace.caches.emplace_back(std::move(fwd.cache));
    };
    std::visit(Overloaded{
                   [&](const ConvLayer& l) { step(conv2d_forward(x, l.params)); },
                   [&](const ReluLayer&) { step(relu_forward(x)); },
                   [&](const MaxPoolLayer&) { step(maxpool2_forward(x)); },
                   [&](const FlattenLayer&) { step(flatten_forward(x)); },
                   [&](const DenseLayer& l) { step(dense_forward(x, l.params)); },
                   [&](const DropoutLayer& l) {
                     Rng unused(0);
                     step(dropout_forward(x, l.rate, mode, dropout_rng ? *dropout_rng : unused));
                   },
               },
               layer);
  }
  trace.probability = sigmoid_forward(x);
  return trace;
}

struct LayerBackward {
  Tensor grad_input;
  std::vector<Tensor> param_grads;  // empty for parameter-free layers
};

/// Backward step of one layer given the cache from its forward call.
inline LayerBackward layer_backward(const Layer& layer, const LayerCache& cache, const Tensor& grad_out) {
  auto mismatch = [] { fail_argument("layer_backward: cache does not belong to this layer kind"); };
  return std::visit(
      Overloaded{
          [&](const ConvLayer& l) -> LayerBackward {
            const auto* c = std::get_if<ConvCache>(&cache);
            if (!c) mismatch();
            ConvGrads g = conv2d_backward(*c, l.params, grad_out);
            return {std::move(g.input), {std::move(g.kernels), std::move(g.bias)}};
          },
          [&](const ReluLayer&) -> LayerBackward {
            const auto* c = std::get_if<ReluCache>(&cache);
            if (!c) mismatch();
            return {relu_backward(*c, grad_out), {}};
          },
          [&](const MaxPoolLayer&) -> LayerBackward {
            const auto* c = std::get_if<MaxPoolCache>(&cache);
            if (!c) mismatch();
            return {maxpool2_backward(*c, grad_out), {}};
          },
          [&](const FlattenLayer&) -> LayerBackward {
            const auto* c = std::get_if<FlattenCache>(&cache);
            if (!c) mismatch();
            return {flatten_backward(*c, grad_out), {}};
          },
          [&](const DenseLayer& l) -> LayerBackward {
            const auto* c = std::get_if<DenseCache>(&cache);
            if (!c) mismatch();
            DenseGrads g = dense_backward(*c, l.params, grad_out);
            return {std::move(g.input), {std::move(g.weights), std::move(g.bias)}};
          },
          [&](const DropoutLayer&) -> LayerBackward {
            const auto* c = std::get_if<DropoutCache>(&cache);
            if (!c) mismatch();
            return {dropout_backward(*c, grad_out), {}};
          },
      },
      layer);
}

/// Parameter gradients (in Model::parameters() order) of a loss whose
/// derivative with respect to the output probability is `grad_probability`.
inline std::vector<Tensor> backward(const Model& model, const Trace& trace, double grad_probability) {
  if (trace.caches.size() != model.layers.size()) fail_argument("backward: trace does not match model");
  Tensor grad({1}, {sigmoid_backward(trace.probability, grad_probability)});
  std::vector<std::vector<Tensor>> per_layer(model.layers.size());
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    LayerBackward step = layer_backward(model.layers[i], trace.caches[i], grad);
    grad = std::move(step.grad_input);
    per_layer[i] = std::move(step.param_grads);
  }
  std::vector<Tensor> grads;
  for (auto& g : per_layer) {
    for (auto& t : g) grads.push_back(std::move(t));
  }
  return grads;
}

inline double predict_proba(const Model& model, const Tensor& image) {
  return forward(model, image, Mode::infer).probability;
}

enum class Diagnosis { negative, positive };

/// Positive iff probability >= threshold.
inline Diagnosis classify(double probability, double threshold) {
  return probability >= threshold ? Diagnosis::positive : Diagnosis::negative;
}

// ---------------------------------------------------------------------------
// Loss and optimizer

struct LossValue {
  double loss;
  double grad;  // d(loss)/d(probability)
};

/// Binary cross-entropy of a (clamped) probability against a 0/1 label.
inline LossValue bce_loss(double probability, int label) {
  const double p = std::clamp(probability, kSigmoidEpsilon, 1.0 - kSigmoidEpsilon);
  const double y = label == kPneumonia ? 1.0 : 0.0;
  const double loss = -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  const double grad = -y / p + (1.0 - y) / (1.0 - p);
  return {loss, grad};
}

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // per-batch sample parallelism; results do not depend on it
  std::optional<AugmentPlan> augment;
};

inline void validate(const TrainConfig& c) {
  if (c.epochs < 1) fail_argument("epochs must be at least 1");
  if (c.batch_size < 1) fail_argument("batch size must be at least 1");
  if (!(c.learning_rate > 0.0)) fail_argument("learning rate must be positive");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0 && c.epsilon > 0.0)) {
    fail_argument("Adam betas must lie in [0, 1) and epsilon must be positive");
  }
  if (c.augment) validate(*c.augment);
}

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
inline void optimizer_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
                           const TrainConfig& config) {
  if (params.size() != grads.size()) fail_argument("optimizer_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(Tensor::zeros(p->shape()));
      state.v.push_back(Tensor::zeros(p->shape()));
    }
  }
  if (state.m.size() != params.size()) fail_argument("optimizer_step: state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.m[i].shape()) {
      fail_argument("optimizer_step: shape mismatch for parameter " + std::to_string(i) + ": " +
                    shape_string(params[i]->shape()) + " vs gradient " + shape_string(grads[i].shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->mutable_values();
    auto m = state.m[i].mutable_values();
    auto v = state.v[i].mutable_values();
    const auto g = grads[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch;  // 1-based
  double train_loss;
  double train_accuracy;
  double val_loss;
  double val_accuracy;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainingHistory {
  std::vector<EpochRecord> records;

  std::size_t size() const { return records.size(); }
  friend bool operator==(const TrainingHistory&, const TrainingHistory&) = default;
};

struct Evaluation {
  double mean_loss;
  double accuracy;  // at threshold 0.5
  std::vector<double> probabilities;
};

inline Evaluation evaluate(const Model& model, std::span<const Sample> samples) {
  if (samples.empty()) fail(ErrorKind::data, "cannot evaluate on an empty set");
  Evaluation out{0.0, 0.0, {}};
  out.probabilities.reserve(samples.size());
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (const Sample& s : samples) {
    const double p = predict_proba(model, s.image);
    out.probabilities.push_back(p);
    loss_sum += bce_loss(p, s.label).loss;
    const int predicted = classify(p, 0.5) == Diagnosis::positive ? kPneumonia : kNormal;
    if (predicted == s.label) ++correct;
  }
  out.mean_loss = loss_sum / static_cast<double>(samples.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return out;
}

struct TrainResult {
  Model model;
  TrainingHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

struct TrainItem {
  std::uint32_t index;  // into the training set
  std::uint32_t copy;   // 0 = original image, k >= 1 = k-th augmented resample
};

inline void accumulate(std::vector<Tensor>& sum, const std::vector<Tensor>& grads) {
  if (sum.empty()) {
    sum = grads;
    return;
  }
  for (std::size_t i = 0; i < sum.size(); ++i) {
    auto s = sum[i].mutable_values();
    const auto g = grads[i].values();
    for (std::size_t j = 0; j < s.size(); ++j) s[j] += g[j];
  }
}

}  // namespace detail

/**
 * Mini-batch training with Adam and binary cross-entropy.
 *
 * Each epoch shuffles the training items with the (seed, epoch) stream,
 * averages per-sample gradients over each batch (summed in batch order, so
 * the thread count never changes the result) and takes one optimizer step
 * per batch. After the epoch the frozen model is evaluated on both sets in
 * inference mode and one history record is appended.
 */
inline TrainResult train(Model model, std::span<const Sample> train_set, std::span<const Sample> val_set,
                         const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  validate(config);
  if (train_set.empty()) fail(ErrorKind::data, "training set is empty");
  if (val_set.empty()) fail(ErrorKind::data, "validation set is empty");
  const Shape input{model.config.channels, model.config.height, model.config.width};
  for (const auto* set : {&train_set, &val_set}) {
    for (const Sample& s : *set) {
      if (s.image.shape() != input) {
        fail(ErrorKind::data, "sample shape " + shape_string(s.image.shape()) + " does not match model input " +
                                  shape_string(input));
      }
    }
  }

  std::vector<detail::TrainItem> items;
  const std::uint32_t copies = config.augment ? static_cast<std::uint32_t>(config.augment->copies) : 0;
  for (std::uint32_t i = 0; i < train_set.size(); ++i) {
    for (std::uint32_t k = 0; k <= copies; ++k) items.push_back({i, k});
  }

  AdamState adam;
  TrainingHistory history;
  const std::size_t threads = std::max<std::size_t>(1, config.threads);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches =
        make_batches(std::span<const detail::TrainItem>(items), config.batch_size, epoch, config.seed);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      std::vector<Tensor> sum;
      std::vector<std::vector<Tensor>> slot_grads(std::min(threads, batch.size()));
      std::vector<double> slot_loss(slot_grads.size());

      auto run_sample = [&](std::size_t pos, std::size_t slot) {
        const detail::TrainItem item = batch[pos];
        const Sample& sample = train_set[item.index];
        Tensor image = sample.image;
        if (item.copy > 0) {
          Rng aug_rng = make_rng(config.augment->seed, {kAugmentStream, epoch, item.index, item.copy});
          image = augment(sample.image, *config.augment, aug_rng);
        }
        Rng drop_rng = make_rng(config.seed, {kDropoutStream, epoch, b, pos});
        const Trace trace = forward(model, image, Mode::train, &drop_rng);
        const LossValue loss = bce_loss(trace.probability, sample.label);
        slot_loss[slot] = loss.loss;
        slot_grads[slot] = backward(model, trace, loss.grad);
      };

      for (std::size_t wave = 0; wave < batch.size(); wave += slot_grads.size()) {
        const std::size_t n = std::min(slot_grads.size(), batch.size() - wave);
        if (n == 1) {
          run_sample(wave, 0);
        } else {
          std::vector<std::jthread> workers;
          for (std::size_t s = 0; s < n; ++s) workers.emplace_back(run_sample, wave + s, s);
        }
        for (std::size_t s = 0; s < n; ++s) {
          if (!std::isfinite(slot_loss[s])) {
            fail(ErrorKind::training, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                          std::to_string(b + 1));
          }
          detail::accumulate(sum, slot_grads[s]);
        }
      }
      const auto count = static_cast<double>(batch.size());
      for (Tensor& g : sum) {
        for (double& v : g.mutable_values()) {
          v /= count;
          if (!std::isfinite(v)) {
            fail(ErrorKind::training, "non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                                          std::to_string(b + 1));
          }
        }
      }
      const std::vector<Tensor*> params = model.parameters();
      optimizer_step(params, sum, adam, config);
    }

    const Evaluation train_eval = evaluate(model, train_set);
    const Evaluation val_eval = evaluate(model, val_set);
    if (!std::isfinite(train_eval.mean_loss) || !std::isfinite(val_eval.mean_loss)) {
      fail(ErrorKind::training, "non-finite evaluation loss after epoch " + std::to_string(epoch));
    }
    history.records.push_back(
        {epoch, train_eval.mean_loss, train_eval.accuracy, val_eval.mean_loss, val_eval.accuracy});
    if (on_epoch) on_epoch(history.records.back());
  }
  return {std::move(model), std::move(history)};
}

}  // namespace pxcnn

#endif  // PXCNN_MODEL_HPP_
