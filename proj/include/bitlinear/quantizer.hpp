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

#include <cmath>
#include <concepts>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bitlinear/tensor.hpp"

namespace bitlinear {

enum class Measure : std::uint8_t { Mean = 0, Median = 1 };

inline std::string_view to_string(Measure m) {
  return m == Measure::Mean ? "mean" : "median";
}

/// Quantization hyperparameters. Activations use `bits`-wide AbsMax
/// quantization into [-Q_b, Q_b - 1]; weights are scaled by the reciprocal
/// of the mean or median magnitude and rounded into {-1, 0, +1}.
///
/// Activation codes are stored as int8, so 2 <= bits <= 8. epsilon may be 0
/// for exact hand-checked arithmetic; an all-zero input then has no defined
/// scale and is rejected.
struct QuantConfig {
  int bits = 8;
  Measure measure = Measure::Mean;
  double epsilon = 1e-5;

  std::int32_t q_b() const { return std::int32_t{1} << (bits - 1); }

  void validate() const {
    if (bits < 2 || bits > 8) {
      throw std::invalid_argument("QuantConfig: bits must be in [2, 8], got " +
                                  std::to_string(bits));
    }
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
      throw std::invalid_argument("QuantConfig: epsilon must be finite and >= 0");
    }
  }
};

/// k-bit activation codes with one positive scale per row (a rank-1 input is
/// a single row).
template <std::floating_point T>
struct ActivationQuant {
  IntTensor<std::int8_t> values;
  std::vector<T> scales;
};

template <std::floating_point T>
struct TernaryWeights {
  IntTensor<std::int8_t> values;
  T scale = 0;
};

namespace detail {

template <std::floating_point T>
T checked_scale(T numerator, T magnitude, double epsilon, std::string_view what) {
  const T denom = magnitude + static_cast<T>(epsilon);
  if (!(denom > T(0))) {
    throw std::domain_error(std::string(what) +
                            ": zero magnitude with epsilon 0 has no scale");
  }
  const T scale = numerator / denom;
  if (!std::isfinite(scale)) {
    throw NonFiniteError(std::string(what) + ": scale overflow");
  }
  return scale;
}

template <std::floating_point T>
void quantize_row(std::span<const T> src, std::span<std::int8_t> dst, T scale,
                  std::int32_t q_b) {
  const T lo = static_cast<T>(-q_b);
  const T hi = static_cast<T>(q_b - 1);
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = static_cast<std::int8_t>(clamp(round_half_even(src[i] * scale), lo, hi));
  }
}

}  // namespace detail

/// AbsMax quantization with a single scale over the whole tensor.
template <std::floating_point T>
ActivationQuant<T> quantize_activations(const Tensor<T>& x, const QuantConfig& cfg) {
  cfg.validate();
  require_finite(x, "quantize_activations");
  const T scale = detail::checked_scale(static_cast<T>(cfg.q_b()), reduce_absmax(x),
                                        cfg.epsilon, "quantize_activations");
  ActivationQuant<T> out{IntTensor<std::int8_t>(x.shape()), {scale}};
  detail::quantize_row(x.data(), out.values.data(), scale, cfg.q_b());
  return out;
}

/// AbsMax quantization with one scale per row of a [batch, features] matrix,
/// so each sample's codes are independent of the rest of the batch.
template <std::floating_point T>
ActivationQuant<T> quantize_activation_rows(const Tensor<T>& x, const QuantConfig& cfg) {
  cfg.validate();
  detail::require_matrix(x, "quantize_activation_rows");
  require_finite(x, "quantize_activation_rows");
  ActivationQuant<T> out{IntTensor<std::int8_t>(x.shape()), {}};
  out.scales.resize(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T scale = detail::checked_scale(static_cast<T>(cfg.q_b()), reduce_absmax(x.row(r)),
                                          cfg.epsilon, "quantize_activation_rows");
    out.scales[r] = scale;
    detail::quantize_row(x.row(r), out.values.row(r), scale, cfg.q_b());
  }
  return out;
}

template <std::floating_point T>
T weight_measure(const Tensor<T>& w, Measure measure) {
  return measure == Measure::Mean ? reduce_absmean(w) : reduce_absmedian(w);
}

/// AbsMeasure ternary quantization with one scale for the whole matrix.
template <std::floating_point T>
TernaryWeights<T> quantize_weights(const Tensor<T>& w, const QuantConfig& cfg) {
  cfg.validate();
  require_finite(w, "quantize_weights");
  const T scale = detail::checked_scale(T(1), weight_measure(w, cfg.measure), cfg.epsilon,
                                        "quantize_weights");
  TernaryWeights<T> out{IntTensor<std::int8_t>(w.shape()), scale};
  auto src = w.data();
  auto dst = out.values.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = static_cast<std::int8_t>(clamp(round_half_even(src[i] * scale), T(-1), T(1)));
  }
  return out;
}

template <std::floating_point T>
void require_positive_scale(T s, std::string_view what) {
  if (!(s > T(0)) || !std::isfinite(s)) {
    throw std::invalid_argument(std::string(what) + ": scale must be positive and finite");
  }
}

/// y = y_quant / (w_scale * x_scale)
template <std::floating_point T, std::signed_integral I>
Tensor<T> dequantize(const IntTensor<I>& y_quant, T w_scale, T x_scale) {
  require_positive_scale(w_scale, "dequantize");
  require_positive_scale(x_scale, "dequantize");
  const T denom = w_scale * x_scale;
  Tensor<T> out(y_quant.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = static_cast<T>(y_quant[i]) / denom;
  }
  require_finite(out, "dequantize");
  return out;
}

/// Integer codes back to real values, one activation scale per row.
template <std::floating_point T>
Tensor<T> dequantize_activation_rows(const ActivationQuant<T>& q) {
  Tensor<T> out(q.values.shape());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto src = q.values.row(r);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < dst.size(); ++c) {
      dst[c] = static_cast<T>(src[c]) / q.scales[r];
    }
  }
  return out;
}

template <std::floating_point T>
Tensor<T> dequantize_weights(const TernaryWeights<T>& w) {
  Tensor<T> out(w.values.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = static_cast<T>(w.values[i]) / w.scale;
  }
  return out;
}

}  // namespace bitlinear
