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

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bitlinear/autodiff.hpp"
#include "bitlinear/bitlinear_layer.hpp"
#include "bitlinear/random.hpp"

namespace bitlinear {

enum class NetworkMode : std::uint8_t { FullPrecision16 = 0, TernaryMean = 1, TernaryMedian = 2 };

inline std::string_view to_string(NetworkMode m) {
  switch (m) {
    case NetworkMode::FullPrecision16: return "16";
    case NetworkMode::TernaryMean: return "mean";
    case NetworkMode::TernaryMedian: return "median";
  }
  return "?";
}

inline NetworkMode parse_network_mode(std::string_view s) {
  if (s == "16" || s == "fp16" || s == "full") return NetworkMode::FullPrecision16;
  if (s == "mean") return NetworkMode::TernaryMean;
  if (s == "median") return NetworkMode::TernaryMedian;
  throw std::invalid_argument("unknown mode '" + std::string(s) + "' (expected 16|mean|median)");
}

/// MLP of BitLinear layers with ReLU between layers and none after the last.
struct ModelSpec {
  std::vector<std::size_t> widths{784, 128, 64, 10};
  NetworkMode mode = NetworkMode::TernaryMean;
  bool bias = true;
  bool bias_after_dequant = false;
  bool norm = true;
  int bits = 8;
  double epsilon = 1e-5;

  void validate() const {
    if (widths.size() < 2) throw std::invalid_argument("model: need at least two widths");
    for (std::size_t w : widths) {
      if (w == 0) throw std::invalid_argument("model: widths must be positive");
    }
    layer_options().quant.validate();
  }

  BitLinearOptions layer_options() const {
    BitLinearOptions o;
    o.mode = mode == NetworkMode::FullPrecision16 ? LayerMode::FullPrecision16 : LayerMode::Ternary;
    o.quant.bits = bits;
    o.quant.epsilon = epsilon;
    o.quant.measure = mode == NetworkMode::TernaryMedian ? Measure::Median : Measure::Mean;
    o.bias = bias;
    o.norm = norm;
    o.bias_after_dequant = bias_after_dequant;
    return o;
  }

  // Weights plus biases; LayerNorm gains and offsets are counted separately.
  std::size_t linear_parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      n += widths[i] * widths[i + 1] + (bias ? widths[i + 1] : 0);
    }
    return n;
  }

  std::size_t norm_parameter_count() const {
    std::size_t n = 0;
    if (norm) {
      for (std::size_t i = 0; i + 1 < widths.size(); ++i) n += 2 * widths[i];
    }
    return n;
  }
};

template <std::floating_point T>
class Classifier {
 public:
  Classifier(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(init_seed);
    const BitLinearOptions opts = spec_.layer_options();
    for (std::size_t i = 0; i + 1 < spec_.widths.size(); ++i) {
      layers_.emplace_back(spec_.widths[i], spec_.widths[i + 1], opts, rng,
                           "layer" + std::to_string(i));
    }
  }

  const ModelSpec& spec() const { return spec_; }
  std::vector<BitLinear<T>>& layers() { return layers_; }
  const std::vector<BitLinear<T>>& layers() const { return layers_; }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& l : layers_)
      for (Parameter<T>* p : l.parameters()) out.push_back(p);
    return out;
  }

  std::size_t parameter_count() const {
    return spec_.linear_parameter_count() + spec_.norm_parameter_count();
  }

  Var forward(Tape<T>& tape, Var x) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i].forward(tape, x);
      if (i + 1 < layers_.size()) x = ad::relu(tape, x);
    }
    return x;
  }

  Tensor<T> logits(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i].forward(h);
      if (i + 1 < layers_.size()) h = relu(h);
    }
    return h;
  }

 private:
  ModelSpec spec_;
  std::vector<BitLinear<T>> layers_;
};

/// Inference-only network of frozen ternary layers.
template <std::floating_point T>
struct TernaryNetwork {
  std::vector<TernaryLayer<T>> layers;

  Tensor<T> logits(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = forward(layers[i], h);
      if (i + 1 < layers.size()) h = relu(h);
    }
    return h;
  }
};

template <std::floating_point T>
TernaryNetwork<T> export_network(const Classifier<T>& model) {
  if (model.spec().mode == NetworkMode::FullPrecision16) {
    throw ModeError("export requires a ternary model");
  }
  TernaryNetwork<T> net;
  for (const auto& l : model.layers()) net.layers.push_back(l.export_ternary());
  return net;
}

/// Row-wise argmax; ties resolve to the lowest class index.
template <std::floating_point T>
std::vector<std::int32_t> predict(const Tensor<T>& logits) {
  std::vector<std::int32_t> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    out[r] = static_cast<std::int32_t>(best);
  }
  return out;
}

}  // namespace bitlinear
