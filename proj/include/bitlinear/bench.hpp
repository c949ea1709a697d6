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
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "bitlinear/quantizer.hpp"
#include "bitlinear/random.hpp"
#include "bitlinear/ternary_kernel.hpp"

namespace bitlinear {

struct BenchShape {
  std::size_t batch = 0, k = 0, n = 0;

  std::string to_string() const {
    return std::to_string(batch) + "x" + std::to_string(k) + "x" + std::to_string(n);
  }
};

/// Parses "BxKxN", e.g. "128x784x128".
inline BenchShape parse_bench_shape(const std::string& s) {
  BenchShape shape;
  char tail = 0;
  unsigned long long b = 0, k = 0, n = 0;
  if (std::sscanf(s.c_str(), "%llux%llux%llu%c", &b, &k, &n, &tail) != 3 || b == 0 || k == 0 ||
      n == 0) {
    throw std::invalid_argument("bad shape '" + s + "', expected BxKxN with positive extents");
  }
  shape.batch = b;
  shape.k = k;
  shape.n = n;
  return shape;
}

struct BenchRow {
  BenchShape shape;
  double ternary_ns = 0.0;  // median over repetitions
  double float_ns = 0.0;
  double max_rel_error = 0.0;

  double ratio() const { return ternary_ns > 0.0 ? float_ns / ternary_ns : 0.0; }
};

namespace detail {

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : v[m - 1] + (v[m] - v[m - 1]) / 2;
}

}  // namespace detail

inline constexpr double kBenchTolerance = 1e-4;

/// Times the packed ternary kernel against a float32 matmul on the same
/// dequantized operands. Both outputs are cross-checked after dequantization;
/// a disagreement above kBenchTolerance relative is an error.
inline std::vector<BenchRow> bench(const std::vector<BenchShape>& shapes, std::size_t repetitions,
                                   std::uint64_t seed = 0, unsigned threads = 1) {
  if (repetitions == 0) throw std::invalid_argument("bench: repetitions must be positive");
  if (shapes.empty()) throw std::invalid_argument("bench: no shapes given");
  using Clock = std::chrono::steady_clock;
  std::vector<BenchRow> rows;
  for (std::size_t si = 0; si < shapes.size(); ++si) {
    const BenchShape& s = shapes[si];
    if (s.batch == 0 || s.k == 0 || s.n == 0) throw std::invalid_argument("bench: empty shape");
    Rng rng(derive_seed(seed, si));
    Tensor<float> x({s.batch, s.k});
    Tensor<float> w({s.k, s.n});
    for (float& v : x.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (float& v : w.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const QuantConfig cfg;
    const auto xq = quantize_activation_rows(x, cfg);
    const auto wq = quantize_weights(w, cfg);
    const PackedTernary packed = pack(wq.values);
    const Tensor<float> xf = cast<float>(xq.values);
    const Tensor<float> wf = cast<float>(wq.values);

    std::vector<double> t_times, f_times;
    IntTensor<std::int32_t> yq;
    Tensor<float> yf;
    for (std::size_t r = 0; r < repetitions; ++r) {
      auto t0 = Clock::now();
      yq = ternary_matmul(xq.values, packed, threads);
      auto t1 = Clock::now();
      yf = matmul(xf, wf);
      auto t2 = Clock::now();
      t_times.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
      f_times.push_back(std::chrono::duration<double, std::nano>(t2 - t1).count());
    }

    BenchRow row{s, detail::median_of(t_times), detail::median_of(f_times), 0.0};
    for (std::size_t b = 0; b < s.batch; ++b) {
      const double denom = static_cast<double>(wq.scale) * xq.scales[b];
      for (std::size_t n = 0; n < s.n; ++n) {
        const double a = yq(b, n) / denom;
        const double f = yf(b, n) / denom;
        const double err = std::abs(a - f) / std::max(1.0, std::abs(a));
        row.max_rel_error = std::max(row.max_rel_error, err);
      }
    }
    if (row.max_rel_error > kBenchTolerance) {
      throw std::runtime_error("bench: ternary and float paths disagree on " + s.to_string());
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "shape,ternary_ns,float_ns,ratio\n";
  char buf[160];
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.0f,%.0f,%.4f\n", r.shape.to_string().c_str(),
                  r.ternary_ns, r.float_ns, r.ratio());
    out += buf;
  }
  return out;
}

}  // namespace bitlinear
