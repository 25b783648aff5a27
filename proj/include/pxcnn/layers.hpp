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

#ifndef PXCNN_LAYERS_HPP_
#define PXCNN_LAYERS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pxcnn/error.hpp"
#include "pxcnn/random.hpp"
#include "pxcnn/tensor.hpp"

namespace pxcnn {

// Forward/backward kernels for each layer of the network. Forward calls
// return the output together with the cache that the matching backward call
// needs; backward calls check the incoming gradient against the shape the
// forward call produced.

/// Valid (unpadded) stride-1 convolution parameters.
struct ConvParams {
  Tensor kernels;  // [out_channels, in_channels, kh, kw]
  Tensor bias;     // [out_channels]

  std::size_t out_channels() const { return kernels.dim(0); }
  std::size_t in_channels() const { return kernels.dim(1); }
  std::size_t kernel_h() const { return kernels.dim(2); }
  std::size_t kernel_w() const { return kernels.dim(3); }
};

struct DenseParams {
  Tensor weights;  // [in_features, out_features]
  Tensor bias;     // [out_features]

  std::size_t in_features() const { return weights.dim(0); }
  std::size_t out_features() const { return weights.dim(1); }
};

struct ConvCache {
  Tensor input;
};

struct ReluCache {
  Shape shape;
  std::vector<bool> positive;
};

struct MaxPoolCache {
  Shape input_shape;
  std::vector<std::size_t> argmax;  // flat input offset per output element
};

struct FlattenCache {
  Shape input_shape;
};

struct DenseCache {
  Tensor input;
};

struct DropoutCache {
  Shape shape;
  std::vector<double> scale;  // 0 or 1/(1-rate) per element; all 1 in inference
};

using LayerCache =
    std::variant<ConvCache, ReluCache, MaxPoolCache, FlattenCache, DenseCache, DropoutCache>;

template <typename Cache>
struct Forward {
  Tensor output;
  Cache cache;
};

struct ConvGrads {
  Tensor input;
  Tensor kernels;
  Tensor bias;
};

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

enum class Mode { train, infer };

inline constexpr double kSigmoidEpsilon = 1e-12;

namespace detail {

inline void check_grad_shape(const char* layer, const Shape& expected, const Tensor& grad_out) {
  if (grad_out.shape() != expected) {
    fail_argument(std::string(layer) + " backward: gradient shape " +
                  shape_string(grad_out.shape()) + " does not match forward output " +
                  shape_string(expected));
  }
}

inline Shape conv_output_shape(const Shape& input, const ConvParams& params) {
  return {params.out_channels(), input[1] - params.kernel_h() + 1,
          input[2] - params.kernel_w() + 1};
}

}  // namespace detail

inline void validate(const ConvParams& params) {
  if (params.kernels.rank() != 4 || params.bias.rank() != 1 ||
      params.bias.dim(0) != params.kernels.dim(0)) {
    fail_argument("conv params: kernels " + shape_string(params.kernels.shape()) +
                  " inconsistent with bias " + shape_string(params.bias.shape()));
  }
}

inline void validate(const DenseParams& params) {
  if (params.weights.rank() != 2 || params.bias.rank() != 1 ||
      params.bias.dim(0) != params.weights.dim(1)) {
    fail_argument("dense params: weights " + shape_string(params.weights.shape()) +
                  " inconsistent with bias " + shape_string(params.bias.shape()));
  }
}

/// He-uniform initialisation: U(-b, b), b = sqrt(6 / fan_in); zero bias.
inline ConvParams he_uniform_conv(std::size_t out_channels, std::size_t in_channels,
                                  std::size_t kernel, Rng& rng) {
  Tensor k = Tensor::zeros({out_channels, in_channels, kernel, kernel});
  const double bound = std::sqrt(6.0 / static_cast<double>(in_channels * kernel * kernel));
  for (double& v : k.mutable_values()) v = uniform(rng, -bound, bound);
  return {std::move(k), Tensor::zeros({out_channels})};
}

inline DenseParams he_uniform_dense(std::size_t in_features, std::size_t out_features, Rng& rng) {
  Tensor w = Tensor::zeros({in_features, out_features});
  const double bound = std::sqrt(6.0 / static_cast<double>(in_features));
  for (double& v : w.mutable_values()) v = uniform(rng, -bound, bound);
  return {std::move(w), Tensor::zeros({out_features})};
}

// ---------------------------------------------------------------------------
// Conv2D

/// output(f,y,x) = bias(f) + sum_{c,dy,dx} input(c,y+dy,x+dx) * kernels(f,c,dy,dx)
/// The sum runs over (c, dy, dx) in ascending order; the bias is added last.
inline Forward<ConvCache> conv2d_forward(const Tensor& input, const ConvParams& params) {
  validate(params);
  if (input.rank() != 3 || input.dim(0) != params.in_channels() ||
      input.dim(1) < params.kernel_h() || input.dim(2) < params.kernel_w()) {
    fail_argument("conv2d: input " + shape_string(input.shape()) +
                  " incompatible with kernels " + shape_string(params.kernels.shape()));
  }
  const std::size_t channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  const std::size_t filters = params.out_channels();
  const std::size_t kh = params.kernel_h(), kw = params.kernel_w();
  const std::size_t oh = height - kh + 1, ow = width - kw + 1;

  Tensor out = Tensor::zeros({filters, oh, ow});
  const double* in = input.values().data();
  const double* kern = params.kernels.values().data();
  double* o = out.mutable_values().data();

  for (std::size_t f = 0; f < filters; ++f) {
    double* of = o + f * oh * ow;
    for (std::size_t c = 0; c < channels; ++c) {
      const double* ic = in + c * height * width;
      for (std::size_t dy = 0; dy < kh; ++dy) {
        for (std::size_t dx = 0; dx < kw; ++dx) {
          const double k = kern[((f * channels + c) * kh + dy) * kw + dx];
          for (std::size_t y = 0; y < oh; ++y) {
            const double* irow = ic + (y + dy) * width + dx;
            double* orow = of + y * ow;
            for (std::size_t x = 0; x < ow; ++x) orow[x] += irow[x] * k;
          }
        }
      }
    }
    const double b = params.bias[f];
    for (std::size_t i = 0; i < oh * ow; ++i) of[i] += b;
  }
  return {std::move(out), ConvCache{input}};
}

inline ConvGrads conv2d_backward(const ConvCache& cache, const ConvParams& params,
                                 const Tensor& grad_out) {
  const Tensor& input = cache.input;
  detail::check_grad_shape("conv2d", detail::conv_output_shape(input.shape(), params), grad_out);
  const std::size_t channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  const std::size_t filters = params.out_channels();
  const std::size_t kh = params.kernel_h(), kw = params.kernel_w();
  const std::size_t oh = grad_out.dim(1), ow = grad_out.dim(2);

  ConvGrads grads{Tensor::zeros(input.shape()), Tensor::zeros(params.kernels.shape()),
                  Tensor::zeros(params.bias.shape())};
  const double* in = input.values().data();
  const double* kern = params.kernels.values().data();
  const double* g = grad_out.values().data();
  double* gin = grads.input.mutable_values().data();
  double* gk = grads.kernels.mutable_values().data();
  double* gb = grads.bias.mutable_values().data();

  for (std::size_t f = 0; f < filters; ++f) {
    const double* gf = g + f * oh * ow;
    double sum = 0.0;
    for (std::size_t i = 0; i < oh * ow; ++i) sum += gf[i];
    gb[f] = sum;
    for (std::size_t c = 0; c < channels; ++c) {
      const double* ic = in + c * height * width;
      double* gic = gin + c * height * width;
      for (std::size_t dy = 0; dy < kh; ++dy) {
        for (std::size_t dx = 0; dx < kw; ++dx) {
          const std::size_t kidx = ((f * channels + c) * kh + dy) * kw + dx;
          const double k = kern[kidx];
          double acc = 0.0;
          for (std::size_t y = 0; y < oh; ++y) {
            const double* irow = ic + (y + dy) * width + dx;
            double* girow = gic + (y + dy) * width + dx;
            const double* grow = gf + y * ow;
            for (std::size_t x = 0; x < ow; ++x) {
              acc += grow[x] * irow[x];
              girow[x] += grow[x] * k;
            }
          }
          gk[kidx] = acc;
        }
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// ReLU

inline Forward<ReluCache> relu_forward(const Tensor& input) {
  Tensor out = input;
  ReluCache cache{input.shape(), std::vector<bool>(input.size())};
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    cache.positive[i] = ov[i] > 0.0;
    if (!cache.positive[i]) ov[i] = 0.0;
  }
  return {std::move(out), std::move(cache)};
}

inline Tensor relu_backward(const ReluCache& cache, const Tensor& grad_out) {
  detail::check_grad_shape("relu", cache.shape, grad_out);
  Tensor grad = grad_out;
  auto gv = grad.mutable_values();
  for (std::size_t i = 0; i < gv.size(); ++i) {
    if (!cache.positive[i]) gv[i] = 0.0;
  }
  return grad;
}

// ---------------------------------------------------------------------------
// MaxPool 2x2, stride 2. Odd trailing rows/columns are dropped.

inline Forward<MaxPoolCache> maxpool2_forward(const Tensor& input) {
  if (input.rank() != 3 || input.dim(1) < 2 || input.dim(2) < 2) {
    fail_argument("maxpool2: input " + shape_string(input.shape()) +
                  " needs rank 3 with spatial size >= 2");
  }
  const std::size_t channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  const std::size_t oh = height / 2, ow = width / 2;
  Tensor out = Tensor::zeros({channels, oh, ow});
  MaxPoolCache cache{input.shape(), std::vector<std::size_t>(channels * oh * ow)};
  const auto in = input.values();
  auto o = out.mutable_values();

  std::size_t oi = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x, ++oi) {
        const std::size_t top_left = (c * height + 2 * y) * width + 2 * x;
        const std::size_t window[4] = {top_left, top_left + 1, top_left + width,
                                       top_left + width + 1};
        std::size_t best = window[0];
        // Strict comparison: ties keep the earliest row-major position.
        for (std::size_t w = 1; w < 4; ++w) {
          if (in[window[w]] > in[best]) best = window[w];
        }
        o[oi] = in[best];
        cache.argmax[oi] = best;
      }
    }
  }
  return {std::move(out), std::move(cache)};
}

inline Tensor maxpool2_backward(const MaxPoolCache& cache, const Tensor& grad_out) {
  const Shape& in = cache.input_shape;
  detail::check_grad_shape("maxpool2", {in[0], in[1] / 2, in[2] / 2}, grad_out);
  Tensor grad = Tensor::zeros(in);
  const auto g = grad_out.values();
  auto gi = grad.mutable_values();
  for (std::size_t i = 0; i < g.size(); ++i) gi[cache.argmax[i]] += g[i];
  return grad;
}

// ---------------------------------------------------------------------------
// Flatten

inline Forward<FlattenCache> flatten_forward(const Tensor& input) {
  if (input.rank() != 3) fail_argument("flatten: expected rank-3 input, got " + shape_string(input.shape()));
  return {input.reshaped({input.size()}), FlattenCache{input.shape()}};
}

inline Tensor flatten_backward(const FlattenCache& cache, const Tensor& grad_out) {
  detail::check_grad_shape("flatten", {shape_product(cache.input_shape)}, grad_out);
  return grad_out.reshaped(cache.input_shape);
}

// ---------------------------------------------------------------------------
// Dense

/// output = input^T * W + b, summing over input features in ascending order.
inline Forward<DenseCache> dense_forward(const Tensor& input, const DenseParams& params) {
  validate(params);
  if (input.rank() != 1 || input.dim(0) != params.in_features()) {
    fail_argument("dense: input " + shape_string(input.shape()) + " incompatible with weights " +
                  shape_string(params.weights.shape()));
  }
  const std::size_t n_in = params.in_features(), n_out = params.out_features();
  Tensor out = Tensor::zeros({n_out});
  const auto in = input.values();
  const double* w = params.weights.values().data();
  double* o = out.mutable_values().data();
  for (std::size_t i = 0; i < n_in; ++i) {
    const double v = in[i];
    const double* wrow = w + i * n_out;
    for (std::size_t j = 0; j < n_out; ++j) o[j] += v * wrow[j];
  }
  for (std::size_t j = 0; j < n_out; ++j) o[j] += params.bias[j];
  return {std::move(out), DenseCache{input}};
}

inline DenseGrads dense_backward(const DenseCache& cache, const DenseParams& params,
                                 const Tensor& grad_out) {
  detail::check_grad_shape("dense", {params.out_features()}, grad_out);
  const std::size_t n_in = params.in_features(), n_out = params.out_features();
  DenseGrads grads{Tensor::zeros({n_in}), Tensor::zeros(params.weights.shape()), grad_out};
  const auto in = cache.input.values();
  const auto g = grad_out.values();
  const double* w = params.weights.values().data();
  double* gw = grads.weights.mutable_values().data();
  auto gin = grads.input.mutable_values();
  for (std::size_t i = 0; i < n_in; ++i) {
    const double* wrow = w + i * n_out;
    double* gwrow = gw + i * n_out;
    double acc = 0.0;
    for (std::size_t j = 0; j < n_out; ++j) {
      gwrow[j] = in[i] * g[j];
      acc += wrow[j] * g[j];
    }
    gin[i] = acc;
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Dropout (inverted: survivors are scaled by 1/(1-rate) at training time)

inline void validate_dropout_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    fail_argument("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
}

inline Forward<DropoutCache> dropout_forward(const Tensor& input, double rate, Mode mode, Rng& rng) {
  validate_dropout_rate(rate);
  DropoutCache cache{input.shape(), std::vector<double>(input.size(), 1.0)};
  if (mode == Mode::infer) return {input, std::move(cache)};
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor out = input;
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    cache.scale[i] = uniform01(rng) >= rate ? keep_scale : 0.0;
    ov[i] *= cache.scale[i];
  }
  return {std::move(out), std::move(cache)};
}

inline Tensor dropout_backward(const DropoutCache& cache, const Tensor& grad_out) {
  detail::check_grad_shape("dropout", cache.shape, grad_out);
  Tensor grad = grad_out;
  auto gv = grad.mutable_values();
  for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= cache.scale[i];
  return grad;
}

// ---------------------------------------------------------------------------
// Sigmoid output head

inline double sigmoid(double x) {
  const double p = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return std::clamp(p, kSigmoidEpsilon, 1.0 - kSigmoidEpsilon);
}

inline double sigmoid_forward(const Tensor& logit) {
  if (logit.size() != 1) fail_argument("sigmoid: expected a single logit, got " + shape_string(logit.shape()));
  return sigmoid(logit[0]);
}

/// d(loss)/d(logit) given the forward probability and d(loss)/d(probability).
inline double sigmoid_backward(double probability, double grad_probability) {
  return grad_probability * probability * (1.0 - probability);
}

}  // namespace pxcnn

#endif  // PXCNN_LAYERS_HPP_
