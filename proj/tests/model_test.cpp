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

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "test_util.hpp"

namespace pxcnn {
namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.height = c.width = 8;
  c.extra_layers = 1;
  c.kernel_size = 2;  // 8 -> 7 -> 3 -> 2 -> 1
  c.base_filters = 3;
  c.extra_filters = 4;
  c.dense_hidden = 4;
  c.dropout_rate = 0.0;
  return c;
}

TrainConfig train_config(std::size_t epochs, std::size_t batch) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = batch;
  return tc;
}

std::vector<Sample> noise_samples(std::size_t n, std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({test::random_tensor({1, side, side}, rng, 0, 1), int(i % 2)});
  return out;
}

TEST(BuildModel, ShapeChainingWithoutExtraLayers) {
  ModelConfig c;
  c.extra_layers = 0;
  EXPECT_EQ(feature_shape(c), (Shape{32, 74, 74}));
  const Model m = build_model(c, 1);
  // Conv, ReLU, Pool, Flatten, Dense, ReLU, Dropout, Dense
  EXPECT_EQ(m.layers.size(), 8u);
  EXPECT_EQ(std::get<DenseLayer>(m.layers[4]).params.in_features(), 32u * 74 * 74);
}

TEST(BuildModel, TwoExtraLayersLayout) {
  ModelConfig c;
  c.extra_layers = 2;
  EXPECT_EQ(feature_shape(c), (Shape{64, 17, 17}));  // 150-148-74-72-36-34-17
  const Model m = build_model(c, 1);
  ASSERT_EQ(m.layers.size(), 14u);
  EXPECT_EQ(std::get<ConvLayer>(m.layers[0]).params.out_channels(), 32u);
  EXPECT_EQ(std::get<ConvLayer>(m.layers[3]).params.out_channels(), 64u);
  EXPECT_EQ(std::get<ConvLayer>(m.layers[6]).params.out_channels(), 64u);
  EXPECT_EQ(std::get<DropoutLayer>(m.layers[12]).rate, 0.5);
}

TEST(BuildModel, SpatialCollapseNamesStage) {
  ModelConfig c;
  c.extra_layers = 50;
  try {
    build_model(c, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::training);
    EXPECT_NE(std::string(e.what()).find("extra block"), std::string::npos);
  }
}

TEST(BuildModel, ParameterCountIsPureFunctionOfConfig) {
  for (std::size_t extra : {0u, 1u, 2u, 3u}) {
    ModelConfig c;
    c.height = c.width = 48;
    c.extra_layers = extra;
    Model m = build_model(c, 3);
    std::size_t n = 0;
    for (const Tensor* t : m.parameters()) n += t->size();
    EXPECT_EQ(n, parameter_count(c));
  }
}

TEST(BuildModel, DeterministicGivenSeed) {
  const ModelConfig c = tiny_config();
  Model a = build_model(c, 9), b = build_model(c, 9), other = build_model(c, 10);
  const auto pa = a.parameters(), pb = b.parameters(), po = other.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(*pa[i], *pb[i]);
    any_diff = any_diff || !(*pa[i] == *po[i]);
  }
  EXPECT_TRUE(any_diff);
}

TEST(BuildModel, HeUniformBoundsAndZeroBias) {
  ModelConfig c = tiny_config();
  Model m = build_model(c, 4);
  const auto& conv = std::get<ConvLayer>(m.layers[0]).params;
  const double bound = std::sqrt(6.0 / (1 * 2 * 2));
  for (double v : conv.kernels.values()) EXPECT_LE(std::abs(v), bound);
  EXPECT_EQ(conv.bias, Tensor::zeros({3}));
}

TEST(Bce, KnownValues) {
  EXPECT_NEAR(bce_loss(0.5, 1).loss, std::numbers::ln2, 1e-15);
  EXPECT_NEAR(bce_loss(0.5, 0).loss, std::numbers::ln2, 1e-15);
  EXPECT_LT(bce_loss(1.0 - 1e-12, 1).loss, 1e-11);
  EXPECT_GE(bce_loss(0.3, 1).loss, 0.0);
}

TEST(Bce, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    double p = uniform(rng, 0.05, 0.95);
    const int y = static_cast<int>(trial % 2);
    auto f = [&] { return bce_loss(p, y).loss; };
    const double numeric = test::central_difference(f, p);
    EXPECT_LT(test::relative_error(bce_loss(p, y).grad, numeric), 1e-6);
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor p({3}, {0.5, -1.0, 2.0});
  const Tensor before = p;
  AdamState state;
  std::vector<Tensor*> params{&p};
  const std::vector<Tensor> grads{Tensor::zeros({3})};
  for (int i = 0; i < 5; ++i) optimizer_step(params, grads, state, TrainConfig{});
  EXPECT_EQ(p, before);
}

TEST(Adam, ConstantGradientDecreasesMonotonically) {
  Tensor p({1}, {1.0});
  AdamState state;
  std::vector<Tensor*> params{&p};
  const std::vector<Tensor> grads{Tensor({1}, {0.3})};
  double prev = p[0];
  for (int i = 0; i < 100; ++i) {
    optimizer_step(params, grads, state, TrainConfig{});
    EXPECT_LT(p[0], prev);
    prev = p[0];
  }
}

TEST(Adam, SingleStepMatchesHandEvaluation) {
  // Fresh state, theta = 1, g = 0.5, lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8:
  //   m = 0.05, v = 0.00025, m_hat = 0.5, v_hat = 0.25
  //   theta' = 1 - 1e-3 * 0.5 / (0.5 + 1e-8) = 0.99900000001999999960...
  Tensor p({1}, {1.0});
  AdamState state;
  std::vector<Tensor*> params{&p};
  optimizer_step(params, std::vector<Tensor>{Tensor({1}, {0.5})}, state, TrainConfig{});
  EXPECT_NEAR(p[0], 0.99900000002, 1e-14);
  EXPECT_NEAR(state.m[0][0], 0.05, 1e-16);
  EXPECT_NEAR(state.v[0][0], 0.00025, 1e-18 * 4);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, RejectsShapeMismatch) {
  Tensor p({2}, {1, 2});
  AdamState state;
  std::vector<Tensor*> params{&p};
  EXPECT_THROW(optimizer_step(params, std::vector<Tensor>{Tensor::zeros({3})}, state, TrainConfig{}), Error);
}

TEST(LayerBackward, RejectsCacheOfAnotherKind) {
  EXPECT_THROW(layer_backward(ReluLayer{}, FlattenCache{{1, 2, 2}}, Tensor::zeros({4})), Error);
}

TEST(EndToEndGradient, FiftyParametersMatchFiniteDifferences) {
  const ModelConfig c = tiny_config();
  Rng rng(2718);
  for (int model_seed = 0; model_seed < 2; ++model_seed) {
    Model m = build_model(c, 100 + model_seed);
    test::randomize_biases(m, rng);
    const Tensor image = test::random_tensor({1, 8, 8}, rng, 0, 1);
    const int label = model_seed % 2;
    auto loss = [&] { return bce_loss(forward(m, image, Mode::infer).probability, label).loss; };
    const Trace trace = forward(m, image, Mode::infer);
    const std::vector<Tensor> grads = backward(m, trace, bce_loss(trace.probability, label).grad);
    auto params = m.parameters();
    ASSERT_EQ(grads.size(), params.size());
    for (int k = 0; k < 25; ++k) {
      const std::size_t t = uniform_index(rng, params.size());
      const std::size_t i = uniform_index(rng, params[t]->size());
      const double numeric = test::central_difference(loss, (*params[t])[i]);
      EXPECT_LT(test::relative_error(grads[t][i], numeric), 1e-4) << "tensor " << t << " element " << i;
    }
  }
}

TEST(Predict, DeterministicAndInRange) {
  const ModelConfig c = tiny_config();
  const Model m = build_model(c, 5);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Tensor img = test::random_tensor({1, 8, 8}, rng, 0, 1);
    const double p = predict_proba(m, img);
    EXPECT_EQ(p, predict_proba(m, img));
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
  EXPECT_THROW(predict_proba(m, Tensor::zeros({1, 9, 8})), Error);
}

TEST(Classify, ThresholdRule) {
  EXPECT_EQ(classify(0.9, 0.5), Diagnosis::positive);
  EXPECT_EQ(classify(0.5, 0.5), Diagnosis::positive);
  EXPECT_EQ(classify(0.49, 0.5), Diagnosis::negative);
}

TEST(Classify, MonotoneInProbabilityAntitoneInThreshold) {
  Rng rng(6);
  for (int i = 0; i < 500; ++i) {
    double a = uniform01(rng), b = uniform01(rng);
    if (a > b) std::swap(a, b);
    const double t = uniform01(rng);
    if (classify(a, t) == Diagnosis::positive) {
      EXPECT_EQ(classify(b, t), Diagnosis::positive);
    }
    if (classify(t, b) == Diagnosis::positive) {
      EXPECT_EQ(classify(t, a), Diagnosis::positive);
    }
  }
}

TEST(Train, OneEpochOnOneSample) {
  const auto data = noise_samples(1, 8, 1);
  const TrainResult r = train(build_model(tiny_config(), 1), data, data, train_config(1, 32));
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.history.records[0].epoch, 1u);
  EXPECT_GE(r.history.records[0].train_accuracy, 0.0);
  EXPECT_LE(r.history.records[0].train_accuracy, 1.0);
}

TEST(Train, BitwiseDeterministic) {
  ModelConfig c = tiny_config();
  c.dropout_rate = 0.5;
  const auto data = noise_samples(24, 8, 2);
  TrainConfig tc = train_config(3, 5);
  tc.seed = 11;
  tc.augment = AugmentPlan{};
  const TrainResult a = train(build_model(c, 11), data, data, tc);
  const TrainResult b = train(build_model(c, 11), data, data, tc);
  EXPECT_EQ(a.history, b.history);
  const auto pa = a.model.parameters(), pb = b.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i], *pb[i]);
}

TEST(Train, ThreadCountDoesNotChangeResult) {
  ModelConfig c = tiny_config();
  c.dropout_rate = 0.5;
  const auto data = noise_samples(20, 8, 3);
  TrainConfig tc = train_config(2, 7);
  tc.seed = 5;
  const TrainResult one = train(build_model(c, 5), data, data, tc);
  tc.threads = 3;
  const TrainResult three = train(build_model(c, 5), data, data, tc);
  EXPECT_EQ(one.history, three.history);
  const auto pa = one.model.parameters(), pb = three.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i], *pb[i]);
}

TEST(Train, SingleRepeatedSampleLossNonIncreasing) {
  ModelConfig c = tiny_config();
  const auto data = noise_samples(1, 8, 4);
  TrainConfig tc = train_config(12, 1);
  const TrainResult r = train(build_model(c, 4), data, data, tc);
  for (std::size_t e = 2; e < r.history.size(); ++e) {
    EXPECT_LE(r.history.records[e].train_loss, r.history.records[e - 1].train_loss) << "epoch " << e + 1;
  }
}

TEST(Train, RejectsEmptyAndMismatchedData) {
  const auto data = noise_samples(4, 8, 5);
  const Model m = build_model(tiny_config(), 1);
  EXPECT_THROW(train(m, std::span<const Sample>(), data, TrainConfig{}), Error);
  EXPECT_THROW(train(m, data, std::span<const Sample>(), TrainConfig{}), Error);
  const auto wrong = noise_samples(4, 9, 5);
  EXPECT_THROW(train(m, wrong, data, TrainConfig{}), Error);
}

TEST(Train, NonFiniteLossAbortsWithEpochAndBatch) {
  ModelConfig c = tiny_config();
  const auto data = noise_samples(8, 8, 6);
  TrainConfig tc = train_config(3, 2);
  tc.learning_rate = 1e300;
  try {
    train(build_model(c, 6), data, data, tc);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::training);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Train, LearnsSyntheticBlobs) {
  SyntheticSpec spec;
  spec.count = 250;
  spec.seed = 21;
  const auto samples = generate_blobs(spec);
  const auto parts = split(std::span<const Sample>(samples), 0.8, 21);
  ModelConfig c;
  c.height = c.width = 32;
  c.extra_layers = 1;
  TrainConfig tc = train_config(5, 16);
  tc.seed = 21;
  const TrainResult r = train(build_model(c, 21), parts.train, parts.test, tc);
  EXPECT_GE(r.history.records.back().train_accuracy, 0.95);
  double pos = 0, neg = 0;
  std::size_t npos = 0, nneg = 0;
  for (const Sample& s : parts.test) {
    const double p = predict_proba(r.model, s.image);
    (s.label ? pos : neg) += p;
    (s.label ? npos : nneg) += 1;
  }
  EXPECT_GT(pos / npos, neg / nneg);
}

TEST(Checkpoint, RoundTripPreservesPredictionsExactly) {
  ModelConfig c = tiny_config();
  c.dropout_rate = 0.25;
  const Model m = build_model(c, 31);
  std::stringstream buf;
  save_checkpoint(m, buf);
  const Model back = load_checkpoint(buf);
  EXPECT_EQ(back.config, m.config);
  Rng rng(32);
  for (int i = 0; i < 50; ++i) {
    const Tensor img = test::random_tensor({1, 8, 8}, rng, 0, 1);
    EXPECT_EQ(predict_proba(back, img), predict_proba(m, img));
  }
  std::stringstream again;
  save_checkpoint(back, again);
  std::stringstream first;
  save_checkpoint(m, first);
  EXPECT_EQ(again.str(), first.str());
}

TEST(Checkpoint, CorruptInputIsCheckpointError) {
  std::stringstream buf;
  save_checkpoint(build_model(tiny_config(), 1), buf);
  const std::string good = buf.str();
  std::vector<std::string> bad{"XXCNN1" + good.substr(6), good.substr(0, good.size() - 3), good + "x", ""};
  for (const auto& bytes : bad) {
    std::istringstream in(bytes);
    try {
      load_checkpoint(in);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::checkpoint);
    }
  }
  std::istringstream in(bad[0]);
  try {
    load_checkpoint(in);
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
}

}  // namespace
}  // namespace pxcnn
