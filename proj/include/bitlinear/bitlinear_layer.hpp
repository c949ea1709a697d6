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
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bitlinear/autodiff.hpp"
#include "bitlinear/quantizer.hpp"
#include "bitlinear/random.hpp"
#include "bitlinear/tensor.hpp"
#include "bitlinear/ternary_kernel.hpp"

namespace bitlinear {

enum class LayerMode : std::uint8_t { FullPrecision16 = 0, Ternary = 1 };

class ModeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct BitLinearOptions {
  LayerMode mode = LayerMode::Ternary;
  QuantConfig quant;
  bool bias = true;
  bool norm = true;
  // false: bias joins the integer product before rescaling (the literal
  // placement, so its effect scales with 1 / (w_scale * x_scale)).
  // true: bias is added to the dequantized output.
  bool bias_after_dequant = false;
};

/// Frozen inference state of one ternary layer.
template <std::floating_point T>
struct TernaryLayer {
  PackedTernary weights;
  T w_scale = 0;
  QuantConfig quant;
  bool bias_after_dequant = false;
  std::optional<Tensor<T>> bias;
  std::optional<Tensor<T>> norm_gain;
  std::optional<Tensor<T>> norm_bias;

  std::size_t in_features() const { return weights.rows; }
  std::size_t out_features() const { return weights.cols; }
};

/// Intermediate values of the last ternary forward pass.
template <std::floating_point T>
struct QuantizedForward {
  Tensor<T> normed;
  ActivationQuant<T> activations;
  TernaryWeights<T> weights;
  IntTensor<std::int32_t> y_quant;
};

namespace detail {

template <std::floating_point T>
Tensor<T> dequantize_output(const IntTensor<std::int32_t>& y_quant, const std::vector<T>& x_scales,
                            T w_scale, const Tensor<T>* bias, bool bias_after_dequant) {
  Tensor<T> y(y_quant.shape());
  const std::size_t cols = y.cols();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const T denom = w_scale * x_scales[r];
    auto src = y_quant.row(r);
    auto dst = y.row(r);
    if (!bias) {
      for (std::size_t c = 0; c < cols; ++c) dst[c] = static_cast<T>(src[c]) / denom;
    } else if (bias_after_dequant) {
      for (std::size_t c = 0; c < cols; ++c) dst[c] = static_cast<T>(src[c]) / denom + (*bias)[c];
    } else {
      for (std::size_t c = 0; c < cols; ++c) dst[c] = (static_cast<T>(src[c]) + (*bias)[c]) / denom;
    }
  }
  require_finite(y, "bitlinear dequantize");
  return y;
}

// Steps 2, 4 and 5 on already-normalized activations. Shared by training,
// evaluation and exported inference so all three agree bit for bit.
template <std::floating_point T>
Tensor<T> ternary_linear(const Tensor<T>& normed, const PackedTernary& weights, T w_scale,
                         const QuantConfig& quant, const Tensor<T>* bias, bool bias_after_dequant,
                         ActivationQuant<T>* act_out = nullptr,
                         IntTensor<std::int32_t>* y_out = nullptr) {
  ActivationQuant<T> act = quantize_activation_rows(normed, quant);
  IntTensor<std::int32_t> y_quant = ternary_matmul(act.values, weights);
  Tensor<T> y = dequantize_output(y_quant, act.scales, w_scale, bias, bias_after_dequant);
  if (act_out) *act_out = std::move(act);
  if (y_out) *y_out = std::move(y_quant);
  return y;
}

}  // namespace detail

/// Inference forward of a frozen ternary layer.
template <std::floating_point T>
Tensor<T> forward(const TernaryLayer<T>& layer, const Tensor<T>& input) {
  if (input.rank() != 2 || input.cols() != layer.in_features()) {
    throw ShapeError("ternary layer: input " + shape_string(input.shape()) + " for " +
                     std::to_string(layer.in_features()) + " features");
  }
  const Tensor<T> normed = layer.norm_gain ? layernorm(input, *layer.norm_gain, *layer.norm_bias)
                                           : input;
  return detail::ternary_linear(normed, layer.weights, layer.w_scale, layer.quant,
                                layer.bias ? &*layer.bias : nullptr, layer.bias_after_dequant);
}

/// Linear layer with ternary weights and k-bit activations. Keeps
/// full-precision shadow weights W[in, out] that the optimizer updates; every
/// forward pass normalizes the input, AbsMax-quantizes it per row,
/// AbsMeasure-quantizes W, multiplies on the integer kernel and rescales.
/// Gradients reach the shadow weights through straight-through estimators.
template <std::floating_point T>
class BitLinear {
 public:
  BitLinear(std::size_t in_features, std::size_t out_features, BitLinearOptions options, Rng& rng,
            const std::string& name = "bitlinear")
      : options_(options) {
    if (in_features == 0 || out_features == 0) {
      throw std::invalid_argument("BitLinear: extents must be positive");
    }
    options_.quant.validate();
    weight_ = {name + ".weight", Tensor<T>({in_features, out_features}), {}, true};
    const double bound = std::sqrt(1.0 / static_cast<double>(in_features));
    for (T& w : weight_.value.data()) w = static_cast<T>(rng.uniform(-bound, bound));
    bias_ = {name + ".bias", Tensor<T>({out_features}), {}, false};
    norm_gain_ = {name + ".norm.gain", Tensor<T>({in_features}, T(1)), {}, false};
    norm_bias_ = {name + ".norm.bias", Tensor<T>({in_features}), {}, false};
  }

  std::size_t in_features() const { return weight_.value.rows(); }
  std::size_t out_features() const { return weight_.value.cols(); }
  const BitLinearOptions& options() const { return options_; }
  void set_mode(LayerMode mode) { options_.mode = mode; }

  Parameter<T>& weight() { return weight_; }
  const Parameter<T>& weight() const { return weight_; }
  Parameter<T>& bias() { return bias_; }
  const Parameter<T>& bias() const { return bias_; }
  Parameter<T>& norm_gain() { return norm_gain_; }
  const Parameter<T>& norm_gain() const { return norm_gain_; }
  Parameter<T>& norm_bias() { return norm_bias_; }
  const Parameter<T>& norm_bias() const { return norm_bias_; }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out{&weight_};
    if (options_.bias) out.push_back(&bias_);
    if (options_.norm) {
      out.push_back(&norm_gain_);
      out.push_back(&norm_bias_);
    }
    return out;
  }

  /// Training forward on a tape.
  Var forward(Tape<T>& tape, Var input) {
    check_input(tape.value(input));
    require_finite(weight_.value, "BitLinear shadow weights");
    Var normed = options_.norm ? ad::layernorm(tape, input, tape.parameter(norm_gain_),
                                               tape.parameter(norm_bias_))
                               : input;
    Var w = tape.parameter(weight_);
    if (options_.mode == LayerMode::FullPrecision16) {
      cache_.reset();
      Var y = ad::matmul(tape, normed, w);
      return options_.bias ? ad::add_row(tape, y, tape.parameter(bias_)) : y;
    }

    QuantizedForward<T> fwd;
    fwd.normed = tape.value(normed);
    fwd.weights = quantize_weights(weight_.value, options_.quant);
    const PackedTernary packed = pack(fwd.weights.values);
    Tensor<T> y = detail::ternary_linear(fwd.normed, packed, fwd.weights.scale, options_.quant,
                                         options_.bias ? &bias_.value : nullptr,
                                         options_.bias_after_dequant, &fwd.activations,
                                         &fwd.y_quant);

    // Quantized operands are detached constants; the STE nodes route their
    // gradients to the normalized input and to the shadow weights.
    Var xs = ad::ste_through(tape, dequantize_activation_rows(fwd.activations), normed);
    Var ws = ad::ste_through(tape, dequantize_weights(fwd.weights), w);
    std::vector<T> row_factor(fwd.activations.scales.size());
    for (std::size_t r = 0; r < row_factor.size(); ++r) {
      row_factor[r] = T(1) / (fwd.weights.scale * fwd.activations.scales[r]);
    }
    const bool literal_bias = !options_.bias_after_dequant;
    cache_ = std::move(fwd);

    auto product_grads = [xs, ws](Tape<T>& t, const Tensor<T>& g) {
      if (t.requires_grad(xs)) t.accumulate(xs, matmul_nt(g, t.value(ws)));
      if (t.requires_grad(ws)) t.accumulate(ws, matmul_tn(t.value(xs), g));
    };
    if (!options_.bias) {
      return tape.record("bitlinear", {xs, ws}, std::move(y), product_grads);
    }
    Var b = tape.parameter(bias_);
    return tape.record("bitlinear", {xs, ws, b}, std::move(y),
                       [product_grads, b, literal_bias, row_factor = std::move(row_factor)](
                           Tape<T>& t, const Tensor<T>& g) {
                         product_grads(t, g);
                         Tensor<T> gb(t.value(b).shape());
                         for (std::size_t r = 0; r < g.rows(); ++r) {
                           const T f = literal_bias ? row_factor[r] : T(1);
                           auto row = g.row(r);
                           for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c] * f;
                         }
                         t.accumulate(b, gb);
                       });
  }

  /// Evaluation forward without recording. Same arithmetic as the tape path.
  Tensor<T> forward(const Tensor<T>& input) const {
    check_input(input);
    require_finite(weight_.value, "BitLinear shadow weights");
    const Tensor<T> normed = options_.norm ? layernorm(input, norm_gain_.value, norm_bias_.value)
                                           : input;
    const Tensor<T>* b = options_.bias ? &bias_.value : nullptr;
    if (options_.mode == LayerMode::FullPrecision16) {
      Tensor<T> y = matmul(normed, weight_.value);
      if (b) {
        for (std::size_t r = 0; r < y.rows(); ++r) {
          auto row = y.row(r);
          for (std::size_t c = 0; c < row.size(); ++c) row[c] += (*b)[c];
        }
      }
      return y;
    }
    const TernaryWeights<T> tw = quantize_weights(weight_.value, options_.quant);
    return detail::ternary_linear(normed, pack(tw.values), tw.scale, options_.quant, b,
                                  options_.bias_after_dequant);
  }

  /// Ternary forward with the integer product replaced by a floating-point
  /// matmul of the dequantized operands.
  Tensor<T> forward_simulated(const Tensor<T>& input) const {
    require_ternary("forward_simulated");
    check_input(input);
    const Tensor<T> normed = options_.norm ? layernorm(input, norm_gain_.value, norm_bias_.value)
                                           : input;
    const ActivationQuant<T> act = quantize_activation_rows(normed, options_.quant);
    const TernaryWeights<T> tw = quantize_weights(weight_.value, options_.quant);
    Tensor<T> y = matmul(dequantize_activation_rows(act), dequantize_weights(tw));
    if (options_.bias) {
      for (std::size_t r = 0; r < y.rows(); ++r) {
        const T f = options_.bias_after_dequant ? T(1) : T(1) / (tw.scale * act.scales[r]);
        auto row = y.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias_.value[c] * f;
      }
    }
    return y;
  }

  /// Quantizes the current shadow weights once and freezes the result.
  TernaryLayer<T> export_ternary() const {
    require_ternary("export");
    const TernaryWeights<T> tw = quantize_weights(weight_.value, options_.quant);
    TernaryLayer<T> out;
    out.weights = pack(tw.values);
    out.w_scale = tw.scale;
    out.quant = options_.quant;
    out.bias_after_dequant = options_.bias_after_dequant;
    if (options_.bias) out.bias = bias_.value;
    if (options_.norm) {
      out.norm_gain = norm_gain_.value;
      out.norm_bias = norm_bias_.value;
    }
    return out;
  }

  /// State of the last ternary tape forward, or nullptr.
  const QuantizedForward<T>* last_forward() const { return cache_ ? &*cache_ : nullptr; }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.cols() != in_features()) {
      throw ShapeError("BitLinear: input " + shape_string(x.shape()) + " for " +
                       std::to_string(in_features()) + " input features");
    }
  }

  void require_ternary(const char* what) const {
    if (options_.mode != LayerMode::Ternary) {
      throw ModeError(std::string(what) + " requires a ternary layer");
    }
  }

  BitLinearOptions options_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Parameter<T> norm_gain_;
  Parameter<T> norm_bias_;
  std::optional<QuantizedForward<T>> cache_;
};

template <std::floating_point T>
struct BitLinearGrads {
  Tensor<T> weight;
  Tensor<T> input;  // w.r.t. the normalized input
  Tensor<T> bias;
};

/// Closed-form straight-through gradients for upstream g at the last forward:
/// dW = (x_q / x_scale)^T g, dI = g (W_q / w_scale)^T, db = column sums of g
/// (each row weighted by 1 / (w_scale * x_scale) when the bias sits inside
/// the integer product).
template <std::floating_point T>
BitLinearGrads<T> backward_contract(const BitLinear<T>& layer, const Tensor<T>& upstream) {
  const QuantizedForward<T>* fwd = layer.last_forward();
  if (!fwd) throw GraphError("backward_contract: no ternary forward has run");
  if (upstream.shape() != fwd->y_quant.shape()) {
    throw ShapeError("backward_contract: upstream shape " + shape_string(upstream.shape()));
  }
  const Tensor<T> xs = dequantize_activation_rows(fwd->activations);
  const Tensor<T> ws = dequantize_weights(fwd->weights);
  BitLinearGrads<T> g{matmul_tn(xs, upstream), matmul_nt(upstream, ws),
                      Tensor<T>({layer.out_features()})};
  for (std::size_t r = 0; r < upstream.rows(); ++r) {
    const T f = layer.options().bias_after_dequant
                    ? T(1)
                    : T(1) / (fwd->weights.scale * fwd->activations.scales[r]);
    auto row = upstream.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) g.bias[c] += row[c] * f;
  }
  return g;
}

}  // namespace bitlinear
