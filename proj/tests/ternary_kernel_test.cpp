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

#include <stdexcept>
#include <vector>

#include "bitlinear/bench.hpp"
#include "bitlinear/selftest.hpp"
#include "bitlinear/ternary_kernel.hpp"

namespace bitlinear {
namespace {

IntTensor<std::int8_t> column(std::vector<std::int8_t> v) {
  const std::size_t k = v.size();
  return IntTensor<std::int8_t>({k, 1}, std::move(v));
}

TEST(TernaryKernelTest, PackExamples) {
  EXPECT_EQ(pack(column({-1, 0, 1, 1})).bytes, (std::vector<std::uint8_t>{0x52}));
  EXPECT_EQ(pack(column({0, 0, 0, 0})).bytes, (std::vector<std::uint8_t>{0x00}));
  // Five weights need two bytes; the unused high pairs stay zero.
  EXPECT_EQ(pack(column({1, 1, 1, 1, -1})).bytes, (std::vector<std::uint8_t>{0x55, 0x02}));
}

TEST(TernaryKernelTest, ColumnMajorLayout) {
  // [[1, -1], [0, 1]]: column 0 is (1, 0), column 1 is (-1, 1) -> codes 01 00 10 01.
  IntTensor<std::int8_t> w({2, 2}, std::vector<std::int8_t>{1, -1, 0, 1});
  const auto p = pack(w);
  EXPECT_EQ(p.bytes, (std::vector<std::uint8_t>{0b01'10'00'01}));
  EXPECT_EQ(p.code(0, 1), kCodeMinus);
}

TEST(TernaryKernelTest, ExhaustiveFourWeightRoundTrip) {
  for (int code = 0; code < 81; ++code) {
    std::vector<std::int8_t> v(4);
    for (int i = 0, c = code; i < 4; ++i, c /= 3) v[i] = static_cast<std::int8_t>(c % 3 - 1);
    const auto w = column(v);
    const auto p = pack(w);
    ASSERT_EQ(p.bytes.size(), 1u);
    EXPECT_EQ(unpack(p), w) << code;
  }
}

TEST(TernaryKernelTest, RandomRoundTrip) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const auto w = check::random_ternary(rng, 1 + rng.below(30), 1 + rng.below(9));
    const auto p = pack(w);
    EXPECT_EQ(p.bytes.size(), PackedTernary::byte_count(w.rows(), w.cols()));
    EXPECT_EQ(unpack(p), w);
  }
}

TEST(TernaryKernelTest, PackErrors) {
  EXPECT_THROW(pack(column({0, 2})), PackError);
  PackedTernary reserved{1, 1, {0b11}};
  EXPECT_THROW(validate_packed(reserved), PackError);
  EXPECT_THROW(unpack(reserved), PackError);
  PackedTernary short_payload{5, 1, {0x00}};
  EXPECT_THROW(validate_packed(short_payload), PackError);
  PackedTernary dirty_padding{1, 1, {0b0100}};
  EXPECT_THROW(validate_packed(dirty_padding), PackError);
}

TEST(TernaryKernelTest, MatmulExamples) {
  IntTensor<std::int8_t> x({1, 2}, std::vector<std::int8_t>{127, -64});
  const auto y = ternary_matmul(x, pack(column({1, -1})));
  EXPECT_EQ(y.shape(), (Shape{1, 1}));
  EXPECT_EQ(y[0], 191);

  const auto zero = ternary_matmul(x, pack(IntTensor<std::int8_t>({2, 3})));
  for (auto v : zero.data()) EXPECT_EQ(v, 0);
}

TEST(TernaryKernelTest, MatchesIntegerOracle) {
  Rng rng(2);
  const auto x = check::random_int8(rng, 3, 64);
  const auto w = check::random_ternary(rng, 64, 5);
  const auto got = ternary_matmul(x, pack(w));
  const auto want = reference_int_matmul(x, w);
  for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_EQ(got[i], want[i]);

  const CheckResult r = check_kernel_exactness(2000, 77);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(TernaryKernelTest, ExtremeAccumulation) {
  // Long all -128 rows against all -1 weights: the largest positive sum.
  const std::size_t k = 4099;
  IntTensor<std::int8_t> x({1, k}, std::vector<std::int8_t>(k, -128));
  IntTensor<std::int8_t> w({k, 1}, std::vector<std::int8_t>(k, -1));
  EXPECT_EQ(ternary_matmul(x, pack(w))[0], 128 * static_cast<std::int32_t>(k));
}

TEST(TernaryKernelTest, ThreadCountInvariance) {
  Rng rng(4);
  const auto x = check::random_int8(rng, 7, 333);
  const auto p = pack(check::random_ternary(rng, 333, 41));
  const auto one = ternary_matmul(x, p, 1);
  EXPECT_EQ(ternary_matmul(x, p, 2), one);
  EXPECT_EQ(ternary_matmul(x, p, 3), one);
  EXPECT_EQ(ternary_matmul(x, p, 0), one);
}

TEST(TernaryKernelTest, MatmulErrors) {
  IntTensor<std::int8_t> x({1, 3});
  EXPECT_THROW(ternary_matmul(x, pack(IntTensor<std::int8_t>({2, 2}))), ShapeError);
  PackedTernary truncated{3, 2, {0x00}};
  EXPECT_THROW(ternary_matmul(x, truncated), PackError);
  PackedTernary huge{kMaxInnerDim + 1, 1, {}};
  IntTensor<std::int8_t> wide({1, kMaxInnerDim + 1});
  EXPECT_THROW(ternary_matmul(wide, huge), std::overflow_error);
}

TEST(TernaryKernelTest, BenchReport) {
  const auto rows = bench({{2, 32, 8}, {1, 50, 3}}, 3);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_GT(r.ternary_ns, 0.0);
    EXPECT_GT(r.float_ns, 0.0);
    EXPECT_LE(r.max_rel_error, kBenchTolerance);
  }
  const std::string csv = bench_csv(rows);
  EXPECT_EQ(csv.rfind("shape,ternary_ns,float_ns,ratio\n", 0), 0u);
  EXPECT_NE(csv.find("\n2x32x8,"), std::string::npos);
  EXPECT_NE(csv.find("\n1x50x3,"), std::string::npos);
  EXPECT_THROW(bench({{2, 32, 8}}, 0), std::invalid_argument);
  EXPECT_THROW(parse_bench_shape("2x3"), std::invalid_argument);
  EXPECT_EQ(parse_bench_shape("128x784x10").k, 784u);
}

}  // namespace
}  // namespace bitlinear
