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
#include <stdexcept>
#include <string_view>
#include <vector>

#include "bitlinear/autodiff.hpp"

namespace bitlinear {

// Decoupled: w <- w * (1 - lr * wd) before the Adam update.
// Coupled: wd * w is added to the gradient (L2 penalty through Adam).
enum class DecayStyle : std::uint8_t { Decoupled = 0, Coupled = 1 };

inline std::string_view to_string(DecayStyle s) {
  return s == DecayStyle::Decoupled ? "decoupled" : "coupled";
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  DecayStyle decay_style = DecayStyle::Decoupled;
};

/// Adam over a fixed parameter set. Weight decay only touches parameters
/// flagged with Parameter::decay.
template <std::floating_point T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.learning_rate > 0.0)) throw std::invalid_argument("Adam: learning rate must be > 0");
    if (cfg_.weight_decay < 0.0) throw std::invalid_argument("Adam: weight decay must be >= 0");
    for (Parameter<T>* p : params_) {
      first_.emplace_back(p->value.numel(), T(0));
      second_.emplace_back(p->value.numel(), T(0));
    }
  }

  void zero_grad() {
    for (Parameter<T>* p : params_) p->zero_grad();
  }

  void step() {
    ++steps_;
    const double lr = cfg_.learning_rate;
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_)));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_)));
    const T eps = static_cast<T>(cfg_.epsilon);
    const T step_size = static_cast<T>(lr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter<T>& p = *params_[i];
      if (p.grad.shape() != p.value.shape()) p.zero_grad();
      auto w = p.value.data();
      auto g = p.grad.data();
      auto m = std::span<T>(first_[i]);
      auto v = std::span<T>(second_[i]);
      const bool decay = p.decay && cfg_.weight_decay > 0.0;
      const T wd = static_cast<T>(cfg_.weight_decay);
      const T shrink = static_cast<T>(1.0 - lr * cfg_.weight_decay);
      const bool coupled = cfg_.decay_style == DecayStyle::Coupled;
      for (std::size_t k = 0; k < w.size(); ++k) {
        T gk = g[k];
        if (decay) {
          if (coupled) {
            gk += wd * w[k];
          } else {
            w[k] *= shrink;
          }
        }
        m[k] = b1 * m[k] + (T(1) - b1) * gk;
        v[k] = b2 * v[k] + (T(1) - b2) * gk * gk;
        const T mhat = m[k] / c1;
        const T vhat = v[k] / c2;
        w[k] -= step_size * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  std::size_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return cfg_; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<T>> first_;
  std::vector<std::vector<T>> second_;
  std::size_t steps_ = 0;
};

}  // namespace bitlinear
