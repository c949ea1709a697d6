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
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bitlinear/tensor.hpp"

namespace bitlinear {

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A trainable tensor with its gradient accumulator. `decay` marks tensors
/// that weight decay applies to.
template <std::floating_point T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay = false;

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

/// Append-only record of a forward computation. Nodes are stored in creation
/// order, which is a topological order: an op can only consume nodes that
/// already exist. One tape per forward/backward; a tape is not thread-safe.
template <std::floating_point T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& upstream)>;

  Var constant(Tensor<T> value) { return push("constant", {}, std::move(value), false, {}); }

  // Leaf whose gradient is kept for inspection after backward().
  Var input(Tensor<T> value) { return push("input", {}, std::move(value), true, {}); }

  Var parameter(Parameter<T>& p) {
    Var v = push("parameter", {}, p.value, true, {});
    nodes_[v.id].param = &p;
    return v;
  }

  /// Adds an op node. `backward` receives the gradient of the loss w.r.t.
  /// this node's value and must call accumulate() on its inputs.
  Var record(std::string_view op, std::initializer_list<Var> inputs, Tensor<T> value,
             BackwardFn backward) {
    bool needs_grad = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (Var in : inputs) {
      check(in);
      ids.push_back(in.id);
      needs_grad = needs_grad || nodes_[in.id].requires_grad;
    }
    require_finite(value, op);
    return push(op, std::move(ids), std::move(value), needs_grad,
                needs_grad ? std::move(backward) : BackwardFn{});
  }

  /// Same value, no gradient flows back through it.
  Var detach(Var v) {
    check(v);
    Var out = push("detach", {v.id}, nodes_[v.id].value, false, {});
    nodes_[out.id].detached = true;
    return out;
  }

  const Tensor<T>& value(Var v) const {
    check(v);
    return nodes_[v.id].value;
  }

  // Gradient reached during backward(); zeros if none arrived.
  Tensor<T> grad(Var v) const {
    check(v);
    const Node& n = nodes_[v.id];
    return n.grad.empty() && !n.value.empty() ? Tensor<T>(n.value.shape()) : n.grad;
  }

  bool requires_grad(Var v) const {
    check(v);
    return nodes_[v.id].requires_grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  void accumulate(Var v, const Tensor<T>& delta) {
    check(v);
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (delta.shape() != n.value.shape()) {
      throw ShapeError("gradient shape " + shape_string(delta.shape()) +
                       " does not match value shape " + shape_string(n.value.shape()) +
                       " at node '" + std::string(n.op) + "'");
    }
    if (n.grad.empty()) {
      n.grad = delta;
      return;
    }
    auto dst = n.grad.data();
    auto src = delta.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  /// Reverse sweep from a scalar loss. Each node is visited once, in reverse
  /// creation order; parameter gradients are added into Parameter::grad.
  void backward(Var loss) {
    check(loss);
    if (backward_done_) throw GraphError("backward() already ran on this tape");
    if (nodes_[loss.id].value.numel() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " +
                       shape_string(nodes_[loss.id].value.shape()));
    }
    backward_done_ = true;
    nodes_[loss.id].grad = Tensor<T>(nodes_[loss.id].value.shape(), T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      for (std::size_t in : n.inputs) {
        if (in >= i) throw GraphError("graph cycle at node '" + std::string(n.op) + "'");
      }
      if (n.grad.empty()) continue;
      require_finite(n.grad, "backward");
      if (n.backward) {
        Tensor<T> upstream = n.grad;
        n.backward(*this, upstream);
      }
      if (n.param) {
        if (n.param->grad.shape() != n.grad.shape()) n.param->zero_grad();
        auto dst = n.param->grad.data();
        auto src = n.grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

 private:
  struct Node {
    std::string_view op;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    bool detached = false;
  };

  void check(Var v) const {
    if (v.id >= nodes_.size()) throw GraphError("variable does not belong to this tape");
  }

  Var push(std::string_view op, std::vector<std::size_t> inputs, Tensor<T> value,
           bool requires_grad, BackwardFn fn) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Non-recording kernels shared by the tape ops and inference paths.

inline constexpr double kLayerNormEpsilon = 1e-5;

template <std::floating_point T>
struct LayerNormStats {
  std::vector<T> mean;
  std::vector<T> rstd;
};

/// Per-row (x - mean) / sqrt(var + eps) * gain + bias, variance over F.
template <std::floating_point T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                    LayerNormStats<T>* stats = nullptr) {
  detail::require_matrix(x, "layernorm");
  const std::size_t rows = x.rows(), f = x.cols();
  if (f == 0) throw ShapeError("layernorm: feature dimension is zero");
  if (gain.numel() != f || bias.numel() != f) {
    throw ShapeError("layernorm: gain/bias length must equal " + std::to_string(f));
  }
  Tensor<T> y({rows, f});
  if (stats) {
    stats->mean.assign(rows, T(0));
    stats->rstd.assign(rows, T(0));
  }
  const T inv_f = T(1) / static_cast<T>(f);
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = x.row(r);
    auto out = y.row(r);
    T mean = 0;
    for (T v : in) mean += v;
    mean *= inv_f;
    T var = 0;
    for (T v : in) var += (v - mean) * (v - mean);
    var *= inv_f;
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEpsilon));
    for (std::size_t c = 0; c < f; ++c) {
      out[c] = (in[c] - mean) * rstd * gain[c] + bias[c];
    }
    if (stats) {
      stats->mean[r] = mean;
      stats->rstd[r] = rstd;
    }
  }
  require_finite(y, "layernorm");
  return y;
}

template <std::floating_point T>
void require_labels(std::span<const std::int32_t> labels, std::size_t batch,
                    std::size_t classes) {
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(batch));
  }
  for (std::int32_t l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(l) +
                              " outside [0," + std::to_string(classes) + ")");
    }
  }
}

/// Row softmax with max subtraction.
template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& logits) {
  detail::require_matrix(logits, "softmax");
  Tensor<T> p(logits.shape());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto out = p.row(r);
    const T m = *std::max_element(in.begin(), in.end());
    T z = 0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      out[c] = std::exp(in[c] - m);
      z += out[c];
    }
    for (T& v : out) v /= z;
  }
  return p;
}

/// Mean over the batch of -log softmax(logits)[label].
template <std::floating_point T>
T softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  detail::require_matrix(logits, "softmax_cross_entropy");
  require_labels<T>(labels, logits.rows(), logits.cols());
  T total = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    const T m = *std::max_element(in.begin(), in.end());
    T z = 0;
    for (T v : in) z += std::exp(v - m);
    total += std::log(z) + m - in[static_cast<std::size_t>(labels[r])];
  }
  const T loss = total / static_cast<T>(logits.rows());
  if (!std::isfinite(loss)) throw NonFiniteError("softmax_cross_entropy: non-finite loss");
  return loss;
}

// ---------------------------------------------------------------------------
// Recording ops.

namespace ad {

template <std::floating_point T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  Tensor<T> out = bitlinear::matmul(tape.value(a), tape.value(b));
  return tape.record("matmul", {a, b}, std::move(out), [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) t.accumulate(a, matmul_nt(g, t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b, matmul_tn(t.value(a), g));
  });
}

template <std::floating_point T>
Var add(Tape<T>& tape, Var a, Var b) {
  Tensor<T> out = bitlinear::add(tape.value(a), tape.value(b));
  return tape.record("add", {a, b}, std::move(out), [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

// x[B,F] + bias[F] broadcast over rows.
template <std::floating_point T>
Var add_row(Tape<T>& tape, Var x, Var bias) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& bv = tape.value(bias);
  detail::require_matrix(xv, "add_row");
  if (bv.numel() != xv.cols()) throw ShapeError("add_row: bias length mismatch");
  Tensor<T> out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  return tape.record("add_row", {x, bias}, std::move(out),
                     [x, bias](Tape<T>& t, const Tensor<T>& g) {
                       t.accumulate(x, g);
                       if (!t.requires_grad(bias)) return;
                       Tensor<T> gb(t.value(bias).shape());
                       for (std::size_t r = 0; r < g.rows(); ++r) {
                         auto row = g.row(r);
                         for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
                       }
                       t.accumulate(bias, gb);
                     });
}

template <std::floating_point T>
Var scale(Tape<T>& tape, Var x, T s) {
  return tape.record("scale", {x}, scalar_mul(tape.value(x), s),
                     [x, s](Tape<T>& t, const Tensor<T>& g) { t.accumulate(x, scalar_mul(g, s)); });
}

template <std::floating_point T>
Var sum(Tape<T>& tape, Var x) {
  Tensor<T> out({1}, reduce_sum(tape.value(x)));
  return tape.record("sum", {x}, std::move(out), [x](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, Tensor<T>(t.value(x).shape(), g[0]));
  });
}

/// Scalar sum(x * c) for a constant c; seeds an arbitrary upstream gradient c.
template <std::floating_point T>
Var dot_constant(Tape<T>& tape, Var x, Tensor<T> c) {
  const Tensor<T>& xv = tape.value(x);
  detail::require_same_shape(xv, c, "dot_constant");
  T acc = 0;
  for (std::size_t i = 0; i < c.numel(); ++i) acc += xv[i] * c[i];
  return tape.record("dot_constant", {x}, Tensor<T>({1}, acc),
                     [x, c = std::move(c)](Tape<T>& t, const Tensor<T>& g) {
                       t.accumulate(x, scalar_mul(c, g[0]));
                     });
}

// Subgradient 0 at 0.
template <std::floating_point T>
Var relu(Tape<T>& tape, Var x) {
  return tape.record("relu", {x}, bitlinear::relu(tape.value(x)),
                     [x](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& xv = t.value(x);
                       Tensor<T> dx(g.shape());
                       for (std::size_t i = 0; i < dx.numel(); ++i) {
                         dx[i] = xv[i] > T(0) ? g[i] : T(0);
                       }
                       t.accumulate(x, dx);
                     });
}

/// Straight-through estimator: the value is `quantized`, the backward pass
/// hands the upstream gradient to `surrogate` unchanged (identity Jacobian,
/// no clipping where quantization saturated).
template <std::floating_point T>
Var ste_through(Tape<T>& tape, Tensor<T> quantized, Var surrogate) {
  detail::require_same_shape(quantized, tape.value(surrogate), "ste_through");
  return tape.record("ste_through", {surrogate}, std::move(quantized),
                     [surrogate](Tape<T>& t, const Tensor<T>& g) { t.accumulate(surrogate, g); });
}

template <std::floating_point T>
Var layernorm(Tape<T>& tape, Var x, Var gain, Var bias) {
  LayerNormStats<T> stats;
  Tensor<T> y = bitlinear::layernorm(tape.value(x), tape.value(gain), tape.value(bias), &stats);
  return tape.record(
      "layernorm", {x, gain, bias}, std::move(y),
      [x, gain, bias, stats = std::move(stats)](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xv = t.value(x);
        const Tensor<T>& gv = t.value(gain);
        const std::size_t rows = xv.rows(), f = xv.cols();
        const T inv_f = T(1) / static_cast<T>(f);
        Tensor<T> dx({rows, f});
        Tensor<T> dgain({f});
        Tensor<T> dbias({f});
        std::vector<T> xhat(f), dxhat(f);
        for (std::size_t r = 0; r < rows; ++r) {
          auto in = xv.row(r);
          auto up = g.row(r);
          T mean_d = 0, mean_dx = 0;
          for (std::size_t c = 0; c < f; ++c) {
            xhat[c] = (in[c] - stats.mean[r]) * stats.rstd[r];
            dxhat[c] = up[c] * gv[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat[c];
            dgain[c] += up[c] * xhat[c];
            dbias[c] += up[c];
          }
          mean_d *= inv_f;
          mean_dx *= inv_f;
          auto out = dx.row(r);
          for (std::size_t c = 0; c < f; ++c) {
            out[c] = stats.rstd[r] * (dxhat[c] - mean_d - xhat[c] * mean_dx);
          }
        }
        t.accumulate(x, dx);
        t.accumulate(gain, dgain);
        t.accumulate(bias, dbias);
      });
}

template <std::floating_point T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const std::int32_t> labels) {
  const T loss = bitlinear::softmax_cross_entropy(tape.value(logits), labels);
  std::vector<std::int32_t> owned(labels.begin(), labels.end());
  return tape.record("softmax_cross_entropy", {logits}, Tensor<T>({1}, loss),
                     [logits, owned = std::move(owned)](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T> p = softmax(t.value(logits));
                       const T s = g[0] / static_cast<T>(p.rows());
                       for (std::size_t r = 0; r < p.rows(); ++r) {
                         auto row = p.row(r);
                         row[static_cast<std::size_t>(owned[r])] -= T(1);
                         for (T& v : row) v *= s;
                       }
                       t.accumulate(logits, p);
                     });
}

}  // namespace ad

}  // namespace bitlinear
