/*
Copyright 2026 The bitlinear Authors. All rights reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "bitlinear/optimizer.hpp"
#include "bitlinear/trainer.hpp"

namespace bitlinear {
namespace {

// Three Gaussian blobs in 16 dimensions.
Dataset blobs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Rng centers_rng(1000);
  Tensor<float> centers({3, 16});
  for (float& v : centers.data()) v = static_cast<float>(centers_rng.uniform(-1, 1));
  Dataset d;
  d.images = Tensor<float>({n, 16});
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = static_cast<std::int32_t>(rng.below(3));
    for (std::size_t f = 0; f < 16; ++f)
      d.images(i, f) = centers(d.labels[i], f) + static_cast<float>(rng.uniform(-0.4, 0.4));
  }
  return d;
}

ModelSpec small_spec(NetworkMode mode = NetworkMode::TernaryMean) {
  ModelSpec s;
  s.widths = {16, 12, 3};
  s.mode = mode;
  return s;
}

TrainConfig quick(std::size_t epochs = 3) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 32;
  c.learning_rate = 0.01;
  return c;
}

TEST(ModelSpecTest, DefaultParameterCounts) {
  ModelSpec s;
  EXPECT_EQ(s.linear_parameter_count(), 109386u);
  EXPECT_EQ(s.norm_parameter_count(), 2u * (784 + 128 + 64));
  Classifier<float> m(s, 0);
  EXPECT_EQ(m.parameter_count(), 109386u + 1952u);
  std::size_t counted = 0;
  for (auto* p : m.parameters()) counted += p->value.numel();
  EXPECT_EQ(counted, m.parameter_count());
  EXPECT_EQ(parse_network_mode("median"), NetworkMode::TernaryMedian);
  EXPECT_THROW(parse_network_mode("8bit"), std::invalid_argument);
}

TEST(AdamTest, FirstStepIsSignedLearningRate) {
  Parameter<double> p{"w", Tensor<double>::vector({1.0, -2.0}), Tensor<double>::vector({0.5, -4.0}), false};
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  Adam<double> opt({&p}, cfg);
  opt.step();
  EXPECT_NEAR(p.value[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value[1], -2.0 + 0.1 * 4.0 / (4.0 + 1e-8), 1e-15);
}

TEST(AdamTest, DecayTouchesOnlyFlaggedParameters) {
  Classifier<float> model(small_spec(), 1);
  // Give biases and norm offsets nonzero values so shrinkage would show.
  for (auto* p : model.parameters())
    for (float& v : p->value.data()) v += 0.5f;
  std::vector<Tensor<float>> before;
  for (auto* p : model.parameters()) before.push_back(p->value);
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.5;
  Adam<float> opt(model.parameters(), cfg);
  opt.zero_grad();
  opt.step();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool is_weight = params[i]->name.ends_with(".weight");
    EXPECT_EQ(params[i]->decay, is_weight) << params[i]->name;
    for (std::size_t k = 0; k < before[i].numel(); ++k) {
      const float want = is_weight ? before[i][k] * static_cast<float>(1.0 - 0.1 * 0.5) : before[i][k];
      ASSERT_EQ(params[i]->value[k], want) << params[i]->name;
    }
  }
}

TEST(AdamTest, CoupledDecayEntersTheGradient) {
  Parameter<double> p{"w", Tensor<double>::vector({2.0}), Tensor<double>::vector({0.0}), true};
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.01;
  cfg.decay_style = DecayStyle::Coupled;
  Adam<double> opt({&p}, cfg);
  opt.step();
  // Gradient is wd * w = 0.02, so the first step is lr * sign.
  EXPECT_NEAR(p.value[0], 2.0 - 0.1 * 0.02 / (0.02 + 1e-8), 1e-12);
}

TEST(TrainerTest, LearnsBlobs) {
  const Dataset train_set = blobs(300, 1), test_set = blobs(150, 2);
  for (NetworkMode mode : {NetworkMode::FullPrecision16, NetworkMode::TernaryMean,
                           NetworkMode::TernaryMedian}) {
    std::size_t callbacks = 0;
    const auto r = train(small_spec(mode), quick(8), train_set, test_set,
                         [&](const EpochMetrics&) { ++callbacks; });
    EXPECT_EQ(callbacks, 8u);
    EXPECT_EQ(r.metrics.steps, 8u * 10u);
    EXPECT_GE(r.metrics.final_accuracy, 95.0) << to_string(mode);
    EXPECT_EQ(r.metrics.final_accuracy, evaluate(r.model, test_set));
  }
}

TEST(TrainerTest, IdenticalSeedsGiveIdenticalMetrics) {
  const Dataset train_set = blobs(300, 1), test_set = blobs(100, 2);
  TrainConfig cfg = quick(2);
  cfg.seed = 42;
  const auto a = train(small_spec(), cfg, train_set, test_set);
  const auto b = train(small_spec(), cfg, train_set, test_set);
  EXPECT_EQ(metrics_csv(a.metrics, false), metrics_csv(b.metrics, false));
  cfg.seed = 43;
  const auto c = train(small_spec(), cfg, train_set, test_set);
  EXPECT_NE(metrics_csv(a.metrics, false), metrics_csv(c.metrics, false));
}

TEST(TrainerTest, EvaluationIsBatchInvariant) {
  const Dataset data = blobs(130, 3);
  Classifier<float> model(small_spec(), 9);
  EXPECT_EQ(evaluate(model, data, 128), evaluate(model, data, 1));
  EXPECT_EQ(evaluate(model, data, 128), evaluate(model, data, 1000));
  EXPECT_THROW(evaluate(model, Dataset{}), std::invalid_argument);
}

TEST(TrainerTest, DivergenceIsReported) {
  const Dataset data = blobs(64, 1);
  TrainConfig cfg = quick(1);
  cfg.divergence_loss = 1e-3;
  try {
    train(small_spec(), cfg, data, data);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 1u);
    EXPECT_EQ(e.step(), 0u);
  }
}

TEST(TrainerTest, ConfigValidation) {
  const Dataset data = blobs(10, 1);
  TrainConfig cfg = quick(1);
  cfg.learning_rate = 0;
  EXPECT_THROW(train(small_spec(), cfg, data, data), std::invalid_argument);
  cfg = quick(1);
  cfg.batch_size = 0;
  EXPECT_THROW(train(small_spec(), cfg, data, data), std::invalid_argument);
  ModelSpec wrong = small_spec();
  wrong.widths.front() = 15;
  EXPECT_THROW(train(wrong, quick(1), data, data), std::invalid_argument);
}

TEST(TrainerTest, MetricsCsvFormat) {
  RunMetrics m;
  m.epochs.push_back({1, 0.5, 97.25, 1.5});
  EXPECT_EQ(metrics_csv(m), "epoch,train_loss,test_acc,seconds\n1,0.50000000,97.2500,1.500\n");
  EXPECT_EQ(metrics_csv(m, false), "epoch,train_loss,test_acc\n1,0.50000000,97.2500\n");
}

TEST(SweepTest, RecordsDivergedCellsAsDnf) {
  const Dataset train_set = blobs(200, 1), test_set = blobs(60, 2);
  SweepGrid grid{{NetworkMode::FullPrecision16}, {0.01, 1e6}, {0.0}};
  TrainConfig cfg = quick(2);
  std::vector<std::size_t> reported;
  const auto results = sweep(small_spec(), cfg, grid, train_set, test_set, 2,
                             [&](std::size_t i, const SweepResult&) { reported.push_back(i); });
  ASSERT_EQ(results.size(), 2u);
  EXPECT_EQ(reported.size(), 2u);
  EXPECT_FALSE(results[0].diverged);
  EXPECT_TRUE(results[1].diverged);
  const std::string csv = sweep_csv(results);
  EXPECT_EQ(csv.rfind("mode,lr,wd,final_acc,status\n", 0), 0u);
  EXPECT_NE(csv.find("\n16,1e+06,0,,DNF\n"), std::string::npos) << csv;
  EXPECT_NE(sweep_table(results).find("DNF"), std::string::npos);

  // Cells share the seed: a one-cell sweep reproduces the plain run.
  const auto single = train(small_spec(NetworkMode::FullPrecision16), cfg, train_set, test_set);
  EXPECT_EQ(metrics_csv(results[0].metrics, false), metrics_csv(single.metrics, false));
}

TEST(SweepTest, EmptyGridIsRejected) {
  const Dataset data = blobs(10, 1);
  EXPECT_THROW(sweep(small_spec(), quick(1), SweepGrid{}, data, data), std::invalid_argument);
}

}  // namespace
}  // namespace bitlinear
