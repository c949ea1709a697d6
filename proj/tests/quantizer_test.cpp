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
#include <limits>
#include <vector>

#include "bitlinear/quantizer.hpp"
#include "bitlinear/random.hpp"
#include "bitlinear/selftest.hpp"

namespace bitlinear {
namespace {

QuantConfig exact(Measure m = Measure::Mean) {
  QuantConfig c;
  c.epsilon = 0.0;
  c.measure = m;
  return c;
}

TEST(QuantizerTest, ActivationExamples) {
  auto q = quantize_activations(Tensor<double>::vector({0.5, -1.0, 0.25}), exact());
  EXPECT_EQ(q.scales[0], 128.0);
  EXPECT_EQ(q.values.storage(), (std::vector<std::int8_t>{64, -128, 32}));

  auto sat = quantize_activations(Tensor<double>::vector({1.0}), exact());
  EXPECT_EQ(sat.values[0], 127);

  QuantConfig eps;
  auto zeros = quantize_activations(Tensor<double>::vector({0, 0, 0}), eps);
  EXPECT_DOUBLE_EQ(zeros.scales[0], 128.0 / 1e-5);
  EXPECT_EQ(zeros.values.storage(), (std::vector<std::int8_t>{0, 0, 0}));
}

TEST(QuantizerTest, LowerBitWidths) {
  QuantConfig c = exact();
  c.bits = 4;
  EXPECT_EQ(c.q_b(), 8);
  auto q = quantize_activations(Tensor<double>::vector({1.0, -1.0, 0.3}), c);
  EXPECT_EQ(q.values.storage(), (std::vector<std::int8_t>{7, -8, 2}));
}

TEST(QuantizerTest, RowScalesAreIndependent) {
  auto x = Tensor<double>::matrix({{0.5, -1.0}, {2.0, 4.0}});
  auto q = quantize_activation_rows(x, exact());
  EXPECT_EQ(q.scales, (std::vector<double>{128.0, 32.0}));
  EXPECT_EQ(q.values.storage(), (std::vector<std::int8_t>{64, -128, 64, 127}));
}

TEST(QuantizerTest, WeightExamples) {
  auto mean = quantize_weights(Tensor<double>::vector({0.4, -0.2, 0.1, 0.0}), exact());
  EXPECT_NEAR(mean.scale, 5.714285714285714, 1e-12);
  EXPECT_EQ(mean.values.storage(), (std::vector<std::int8_t>{1, -1, 1, 0}));

  auto w = Tensor<double>::vector({0.05, 0.05, 0.05, 1.0});
  auto med = quantize_weights(w, exact(Measure::Median));
  EXPECT_NEAR(med.scale, 20.0, 1e-12);
  EXPECT_EQ(med.values.storage(), (std::vector<std::int8_t>{1, 1, 1, 1}));
  auto contrast = quantize_weights(w, exact());
  EXPECT_NEAR(contrast.scale, 1.0 / 0.2875, 1e-12);
  EXPECT_EQ(contrast.values.storage(), (std::vector<std::int8_t>{0, 0, 0, 1}));

  QuantConfig eps;
  auto zero = quantize_weights(Tensor<double>({2, 3}), eps);
  for (auto v : zero.values.data()) EXPECT_EQ(v, 0);
}

TEST(QuantizerTest, Errors) {
  auto nan = Tensor<float>::vector({std::numeric_limits<float>::quiet_NaN()});
  EXPECT_THROW(quantize_activations(nan, QuantConfig{}), NonFiniteError);
  EXPECT_THROW(quantize_weights(nan, QuantConfig{}), NonFiniteError);
  QuantConfig bad;
  bad.bits = 1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad.bits = 9;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = QuantConfig{};
  bad.epsilon = -1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  // A zero magnitude with epsilon 0 has no finite scale.
  EXPECT_THROW(quantize_weights(Tensor<float>({4}), exact()), std::domain_error);
  EXPECT_THROW(dequantize(IntTensor<std::int32_t>({1}), 0.0, 1.0), std::invalid_argument);
}

TEST(QuantizerTest, Dequantize) {
  IntTensor<std::int32_t> y({1, 1}, std::vector<std::int32_t>{64});
  EXPECT_EQ(dequantize(y, 4.0, 128.0)[0], 0.125);
  IntTensor<std::int32_t> y2({1, 1}, std::vector<std::int32_t>{191});
  EXPECT_NEAR(dequantize(y2, 10.0 / 3.0, 128.0)[0], 0.44765625, 1e-15);
  EXPECT_EQ(dequantize(IntTensor<std::int32_t>({3}), 7.0, 9.0)[1], 0.0);
}

TEST(QuantizerTest, OutputRangesUnderFuzz) {
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    Tensor<float> x({4, 1 + rng.below(40)});
    const double spread = std::pow(10.0, rng.uniform(-3, 3));
    for (float& v : x.data()) v = static_cast<float>(rng.uniform(-spread, spread));
    QuantConfig c;
    c.bits = 2 + static_cast<int>(rng.below(7));
    c.measure = rng.below(2) ? Measure::Median : Measure::Mean;
    const auto xq = quantize_activation_rows(x, c);
    for (auto v : xq.values.data()) {
      ASSERT_GE(v, -c.q_b());
      ASSERT_LE(v, c.q_b() - 1);
    }
    const auto wq = quantize_weights(x, c);
    for (auto v : wq.values.data()) {
      ASSERT_GE(v, -1);
      ASSERT_LE(v, 1);
    }
  }
}

// Every 4-element pattern over {-s, 0, +s}. With the mean, |w| * scale = 1/p
// for nonzero fraction p, so every pattern with p > 0 maps to sign(w). With
// the median, p = 1/4 has median 0 (no finite scale) and p >= 1/2 maps to
// sign(w).
TEST(QuantizerTest, TernaryPatternsAreFixedPoints) {
  for (double s : {0.1, 1.0, 7.5}) {
    for (int code = 0; code < 81; ++code) {
      Tensor<double> w({4});
      std::vector<std::int8_t> sign(4);
      int nonzero = 0, c = code;
      for (int i = 0; i < 4; ++i, c /= 3) {
        sign[i] = static_cast<std::int8_t>(c % 3 - 1);
        w[i] = s * sign[i];
        nonzero += sign[i] != 0;
      }
      if (nonzero == 0) continue;
      EXPECT_EQ(quantize_weights(w, exact()).values.storage(), sign) << code;
      if (nonzero == 1) {
        EXPECT_THROW(quantize_weights(w, exact(Measure::Median)), std::domain_error);
      } else {
        EXPECT_EQ(quantize_weights(w, exact(Measure::Median)).values.storage(), sign) << code;
      }
    }
  }
}

TEST(QuantizerTest, ScaleInvariance) {
  EXPECT_TRUE(check_scale_invariance<float>(200).passed);
  EXPECT_TRUE(check_scale_invariance<double>(200).passed);
}

// (x_q W_q) / (w_scale x_scale) equals (x_q / x_scale)(W_q / w_scale).
TEST(QuantizerTest, DequantizationCommutesWithProduct) {
  Rng rng(23);
  for (int t = 0; t < 50; ++t) {
    Tensor<double> x({1, 12}), w({12, 5});
    for (double& v : x.data()) v = rng.uniform(-2, 2);
    for (double& v : w.data()) v = rng.uniform(-1, 1);
    auto xq = quantize_activations(x, QuantConfig{});
    auto wq = quantize_weights(w, QuantConfig{});
    IntTensor<std::int32_t> y({1, 5});
    for (std::size_t n = 0; n < 5; ++n)
      for (std::size_t k = 0; k < 12; ++k) y(0, n) += xq.values(0, k) * wq.values(k, n);
    auto lhs = dequantize(y, wq.scale, xq.scales[0]);
    auto rhs = matmul(dequantize_activation_rows(xq), dequantize_weights(wq));
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12);
  }
}

}  // namespace
}  // namespace bitlinear
