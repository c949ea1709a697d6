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

// Numerical self-checks shared by `bitlinear selftest` and the acceptance
// runner. Each check compares the library against an independent oracle
// (hand-evaluated values, a multiply-based integer matmul, closed-form
// gradients built from the quantizer outputs, or central differences).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "bitlinear/autodiff.hpp"
#include "bitlinear/bitlinear_layer.hpp"
#include "bitlinear/quantizer.hpp"
#include "bitlinear/random.hpp"
#include "bitlinear/ternary_kernel.hpp"

namespace bitlinear {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace check {

inline std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

/// max|a - b| / max(max|b|, floor); norm-wise relative error.
template <std::floating_point T>
double relative_error(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-12) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    scale = std::max(scale, std::abs(static_cast<double>(b[i])));
  }
  return diff / std::max(scale, floor);
}

template <std::floating_point T>
Tensor<T> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

inline IntTensor<std::int8_t> random_ternary(Rng& rng, std::size_t k, std::size_t n) {
  IntTensor<std::int8_t> w({k, n});
  for (auto& v : w.data()) v = static_cast<std::int8_t>(static_cast<int>(rng.below(3)) - 1);
  return w;
}

inline IntTensor<std::int8_t> random_int8(Rng& rng, std::size_t b, std::size_t k) {
  IntTensor<std::int8_t> x({b, k});
  for (auto& v : x.data()) v = static_cast<std::int8_t>(static_cast<int>(rng.below(256)) - 128);
  return x;
}

}  // namespace check

/// Hand-evaluated quantizer and layer examples.
inline CheckResult check_quantizer_examples() {
  CheckResult r{"quantizer examples", true, ""};
  auto expect = [&r](bool ok, const char* what) {
    if (!ok && r.passed) {
      r.passed = false;
      r.detail = what;
    }
  };
  QuantConfig c0;
  c0.epsilon = 0.0;

  auto a = quantize_activations(Tensor<double>::vector({0.5, -1.0, 0.25}), c0);
  expect(a.scales[0] == 128.0, "x_scale for [0.5,-1,0.25]");
  expect(a.values.storage() == std::vector<std::int8_t>{64, -128, 32}, "codes for [0.5,-1,0.25]");
  auto sat = quantize_activations(Tensor<double>::vector({1.0}), c0);
  expect(sat.values[0] == 127, "saturation at Q_b - 1");

  auto wm = quantize_weights(Tensor<double>::vector({0.4, -0.2, 0.1, 0.0}), c0);
  expect(std::abs(wm.scale - 1.0 / 0.175) < 1e-12, "mean w_scale");
  expect(wm.values.storage() == std::vector<std::int8_t>{1, -1, 1, 0}, "mean ternary codes");

  QuantConfig med = c0;
  med.measure = Measure::Median;
  auto wd = quantize_weights(Tensor<double>::vector({0.05, 0.05, 0.05, 1.0}), med);
  expect(std::abs(wd.scale - 20.0) < 1e-12, "median w_scale");
  expect(wd.values.storage() == std::vector<std::int8_t>{1, 1, 1, 1}, "median ternary codes");
  auto wc = quantize_weights(Tensor<double>::vector({0.05, 0.05, 0.05, 1.0}), c0);
  expect(wc.values.storage() == std::vector<std::int8_t>{0, 0, 0, 1}, "mean contrast codes");

  IntTensor<std::int32_t> yq({1, 1}, std::vector<std::int32_t>{191});
  auto y = dequantize(yq, 10.0 / 3.0, 128.0);
  expect(std::abs(y[0] - 191.0 / (128.0 * 10.0 / 3.0)) < 1e-15, "dequantize 191");

  // One BitLinear layer, norm and bias off.
  BitLinearOptions opts;
  opts.quant = c0;
  opts.bias = false;
  opts.norm = false;
  Rng rng(1);
  BitLinear<double> layer(2, 1, opts, rng);
  layer.weight().value = Tensor<double>({2, 1}, std::vector<double>{0.3, -0.3});
  Tape<double> tape;
  Var x = tape.input(Tensor<double>({1, 2}, std::vector<double>{1.0, -0.5}));
  Var out = layer.forward(tape, x);
  expect(std::abs(tape.value(out)[0] - 0.447656250) < 1e-12, "layer forward 0.447656");
  tape.backward(ad::sum(tape, out));
  const Tensor<double> gw = layer.weight().grad;
  expect(gw[0] == 127.0 / 128.0 && gw[1] == -0.5, "layer grad_W");
  const Tensor<double> gx = tape.grad(x);
  expect(std::abs(gx[0] - 0.3) < 1e-15 && std::abs(gx[1] + 0.3) < 1e-15, "layer grad_input");

  if (r.passed) r.detail = "all hand-evaluated values reproduced";
  return r;
}

/// Tape gradients through a Ternary BitLinear against the closed forms
/// grad_W = (x_q / x_scale)^T g and grad_in = g (W_q / w_scale)^T built
/// directly from the quantizer outputs.
inline CheckResult check_ste_closed_form(std::size_t trials = 100, std::uint64_t seed = 7,
                                         double tolerance = 1e-6) {
  Rng rng(seed);
  double worst = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t b = 1 + rng.below(8), in = 1 + rng.below(16), out = 1 + rng.below(4);
    BitLinearOptions opts;
    opts.norm = false;
    opts.bias = rng.below(2) == 1;
    opts.quant.measure = rng.below(2) ? Measure::Median : Measure::Mean;
    BitLinear<double> layer(in, out, opts, rng);
    const Tensor<double> input = check::random_tensor<double>(rng, {b, in}, -2.0, 2.0);
    const Tensor<double> g = check::random_tensor<double>(rng, {b, out});

    Tape<double> tape;
    Var x = tape.input(input);
    Var y = layer.forward(tape, x);
    tape.backward(ad::dot_constant(tape, y, g));

    const auto xq = quantize_activation_rows(input, opts.quant);
    const auto wq = quantize_weights(layer.weight().value, opts.quant);
    const Tensor<double> x_deq = dequantize_activation_rows(xq);
    const Tensor<double> w_deq = dequantize_weights(wq);
    const Tensor<double> grad_w = matmul_tn(x_deq, g);
    const Tensor<double> grad_x = matmul_nt(g, w_deq);

    worst = std::max({worst, check::relative_error(layer.weight().grad, grad_w),
                      check::relative_error(tape.grad(x), grad_x)});
  }
  return {"STE closed-form gradients", worst <= tolerance,
          std::to_string(trials) + " shapes, max relative error " + check::fmt("%.3g", worst)};
}

namespace check {

// Central differences of a scalar function of one tensor.
inline Tensor<double> numeric_grad(const std::function<double(const Tensor<double>&)>& f,
                                   Tensor<double> x, double h = 1e-5) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace check

/// LayerNorm, softmax cross-entropy, matmul and ReLU backward passes against
/// central differences (h = 1e-5) at 64-bit.
inline CheckResult check_finite_differences(std::uint64_t seed = 11, double tolerance = 1e-4) {
  Rng rng(seed);
  double worst = 0;
  std::string worst_op = "none";
  auto note = [&](const char* op, double e) {
    if (e > worst) {
      worst = e;
      worst_op = op;
    }
  };
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t b = 2 + rng.below(4), f = 2 + rng.below(6), n = 2 + rng.below(5);
    const Tensor<double> x = check::random_tensor<double>(rng, {b, f}, -2.0, 2.0);
    const Tensor<double> gain = check::random_tensor<double>(rng, {f}, 0.5, 1.5);
    const Tensor<double> beta = check::random_tensor<double>(rng, {f});
    const Tensor<double> w = check::random_tensor<double>(rng, {f, n});
    const Tensor<double> up = check::random_tensor<double>(rng, {b, f});
    const Tensor<double> up_n = check::random_tensor<double>(rng, {b, n});
    std::vector<std::int32_t> labels(b);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng.below(n));

    {  // layernorm w.r.t. input, gain and bias
      Tape<double> t;
      Var vx = t.input(x), vg = t.input(gain), vb = t.input(beta);
      t.backward(ad::dot_constant(t, ad::layernorm(t, vx, vg, vb), up));
      auto loss = [&](const Tensor<double>& xx, const Tensor<double>& gg, const Tensor<double>& bb) {
        const Tensor<double> y = layernorm(xx, gg, bb);
        double s = 0;
        for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * up[i];
        return s;
      };
      note("layernorm/x", check::relative_error(
                              t.grad(vx), check::numeric_grad(
                                              [&](const Tensor<double>& v) { return loss(v, gain, beta); }, x)));
      note("layernorm/gain", check::relative_error(
                                 t.grad(vg), check::numeric_grad(
                                                 [&](const Tensor<double>& v) { return loss(x, v, beta); }, gain)));
      note("layernorm/bias", check::relative_error(
                                 t.grad(vb), check::numeric_grad(
                                                 [&](const Tensor<double>& v) { return loss(x, gain, v); }, beta)));
    }
    {  // softmax cross-entropy
      const Tensor<double> logits = check::random_tensor<double>(rng, {b, n}, -3.0, 3.0);
      Tape<double> t;
      Var vl = t.input(logits);
      t.backward(ad::softmax_cross_entropy(t, vl, std::span<const std::int32_t>(labels)));
      note("softmax_cross_entropy",
           check::relative_error(t.grad(vl), check::numeric_grad(
                                                 [&](const Tensor<double>& v) {
                                                   return softmax_cross_entropy(
                                                       v, std::span<const std::int32_t>(labels));
                                                 },
                                                 logits)));
    }
    {  // matmul, both operands
      Tape<double> t;
      Var va = t.input(x), vw = t.input(w);
      t.backward(ad::dot_constant(t, ad::matmul(t, va, vw), up_n));
      auto loss = [&](const Tensor<double>& aa, const Tensor<double>& ww) {
        const Tensor<double> y = matmul(aa, ww);
        double s = 0;
        for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * up_n[i];
        return s;
      };
      note("matmul/a", check::relative_error(
                           t.grad(va), check::numeric_grad(
                                           [&](const Tensor<double>& v) { return loss(v, w); }, x)));
      note("matmul/b", check::relative_error(
                           t.grad(vw), check::numeric_grad(
                                           [&](const Tensor<double>& v) { return loss(x, v); }, w)));
    }
    {  // relu, kept away from the kink
      Tensor<double> xr = x;
      for (double& v : xr.data())
        if (std::abs(v) < 1e-2) v = 0.5;
      Tape<double> t;
      Var vx = t.input(xr);
      t.backward(ad::dot_constant(t, ad::relu(t, vx), up));
      note("relu", check::relative_error(
                       t.grad(vx), check::numeric_grad(
                                       [&](const Tensor<double>& v) {
                                         const Tensor<double> y = relu(v);
                                         double s = 0;
                                         for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * up[i];
                                         return s;
                                       },
                                       xr)));
    }
  }
  return {"finite-difference gradients", worst <= tolerance,
          "max relative error " + check::fmt("%.3g", worst) + " (" + worst_op + ")"};
}

/// Packed kernel against the multiply-based integer oracle: `instances`
/// random problems, every ternary column for K <= 8 with activations from
/// {-128, -1, 0, 1, 127}, and thread-count invariance.
inline CheckResult check_kernel_exactness(std::size_t instances = 10000, std::uint64_t seed = 3) {
  Rng rng(seed);
  std::size_t mismatches = 0, cases = 0;
  auto compare = [&](const IntTensor<std::int8_t>& x, const IntTensor<std::int8_t>& w,
                     unsigned threads) {
    const auto got = ternary_matmul(x, pack(w), threads);
    const auto want = reference_int_matmul(x, w);
    ++cases;
    for (std::size_t i = 0; i < got.numel(); ++i) {
      if (static_cast<std::int64_t>(got[i]) != want[i]) {
        ++mismatches;
        return;
      }
    }
  };
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t b = 1 + rng.below(4), k = 1 + rng.below(96), n = 1 + rng.below(8);
    compare(check::random_int8(rng, b, k), check::random_ternary(rng, k, n), 1);
  }

  static constexpr std::int8_t kLevels[5] = {-128, -1, 0, 1, 127};
  for (std::size_t k = 1; k <= 8; ++k) {
    std::size_t columns = 1;
    for (std::size_t i = 0; i < k; ++i) columns *= 3;
    IntTensor<std::int8_t> w({k, columns});
    for (std::size_t c = 0; c < columns; ++c) {
      std::size_t code = c;
      for (std::size_t r = 0; r < k; ++r, code /= 3) w(r, c) = static_cast<std::int8_t>(int(code % 3) - 1);
    }
    std::size_t patterns = 1;
    for (std::size_t i = 0; i < k; ++i) patterns *= 5;
    // All activation patterns up to K = 4, a seeded sample of 64 beyond.
    const std::size_t rows = k <= 4 ? patterns : 64;
    IntTensor<std::int8_t> x({rows, k});
    for (std::size_t r = 0; r < rows; ++r) {
      std::size_t code = k <= 4 ? r : rng.below(patterns);
      for (std::size_t j = 0; j < k; ++j, code /= 5) x(r, j) = kLevels[code % 5];
    }
    compare(x, w, 1);
  }

  for (unsigned threads : {1u, 2u, 0u}) {
    Rng local(seed + 1);
    compare(check::random_int8(local, 5, 300), check::random_ternary(local, 300, 37), threads);
  }
  return {"kernel exactness", mismatches == 0,
          std::to_string(cases) + " cases, " + std::to_string(mismatches) + " mismatches"};
}

/// quantize_weights(c * W).values == quantize_weights(W).values for
/// c in {0.5, 1, 3, 100}, epsilon 0, both measures.
template <std::floating_point T = float>
CheckResult check_scale_invariance(std::size_t trials = 1000, std::uint64_t seed = 5) {
  Rng rng(seed);
  std::size_t mismatches = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t rows = 1 + rng.below(32), cols = 1 + rng.below(32);
    const Tensor<T> w = check::random_tensor<T>(rng, {rows, cols});
    for (Measure m : {Measure::Mean, Measure::Median}) {
      QuantConfig cfg;
      cfg.epsilon = 0.0;
      cfg.measure = m;
      const auto base = quantize_weights(w, cfg).values;
      for (double c : {0.5, 1.0, 3.0, 100.0}) {
        if (quantize_weights(scalar_mul(w, static_cast<T>(c)), cfg).values != base) ++mismatches;
      }
    }
  }
  return {"weight scale invariance", mismatches == 0,
          std::to_string(trials) + " matrices x 2 measures x 4 factors, " +
              std::to_string(mismatches) + " mismatches"};
}

inline std::vector<CheckResult> run_selftest() {
  return {check_quantizer_examples(), check_ste_closed_form(), check_kernel_exactness(),
          check_finite_differences(), check_scale_invariance<float>()};
}

}  // namespace bitlinear
