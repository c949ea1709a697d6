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
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

namespace bitlinear {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class EmptyTensorError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised whenever a NaN or Inf would otherwise leave a public operation.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major n-dimensional array. Used for real-valued data
/// (`Tensor<float>`, `Tensor<double>`) and for integer payloads
/// (`IntTensor<std::int8_t>` activations and ternary codes,
/// `IntTensor<std::int32_t>` accumulators).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  // Matrix accessors; callers guarantee rank 2.
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  std::span<T> row(std::size_t r) {
    return std::span<T>(data_).subspan(r * shape_[1], shape_[1]);
  }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * shape_[1], shape_[1]);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " +
                       shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <std::signed_integral I>
using IntTensor = Tensor<I>;

template <std::floating_point T>
void require_finite(const Tensor<T>& t, std::string_view what) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string(what) + ": non-finite value");
    }
  }
}

namespace detail {

template <class A, class B>
void require_same_shape(const Tensor<A>& a, const Tensor<B>& b,
                        std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

template <class T>
void require_matrix(const Tensor<T>& t, std::string_view op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " +
                     shape_string(t.shape()));
  }
}

template <std::floating_point T, class F>
Tensor<T> map(const Tensor<T>& a, std::string_view op, F&& f) {
  Tensor<T> out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  require_finite(out, op);
  return out;
}

template <std::floating_point T, class F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, std::string_view op,
              F&& f) {
  require_same_shape(a, b, op);
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  require_finite(out, op);
  return out;
}

template <std::floating_point T>
void require_non_empty(const Tensor<T>& t, std::string_view op) {
  if (t.empty()) throw EmptyTensorError(std::string(op) + ": empty tensor");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix products. Every output element accumulates along the inner
// dimension in increasing index order, so results are reproducible.

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ " + shape_string(a.shape()) +
                     " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = pa[i * k + p];
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  require_finite(c, "matmul");
  return c;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor<T> t({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t(j, i) = a(i, j);
  return t;
}

// aᵀ·b without the caller materialising the transpose.
template <std::floating_point T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  return matmul(transpose(a), b);
}

// a·bᵀ
template <std::floating_point T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  return matmul(a, transpose(b));
}

// ---------------------------------------------------------------------------
// Elementwise suite.

template <std::floating_point T>
T round_half_even(T x) {
  const T f = std::floor(x);
  const T d = x - f;
  if (d < T(0.5)) return f;
  if (d > T(0.5)) return f + T(1);
  return std::fmod(f, T(2)) == T(0) ? f : f + T(1);
}

template <std::floating_point T>
Tensor<T> round_half_even(const Tensor<T>& a) {
  return detail::map(a, "round_half_even",
                     [](T v) { return round_half_even(v); });
}

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::zip(a, b, "add", [](T x, T y) { return x + y; });
}

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::zip(a, b, "sub", [](T x, T y) { return x - y; });
}

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::zip(a, b, "mul", [](T x, T y) { return x * y; });
}

template <std::floating_point T>
Tensor<T> scalar_mul(const Tensor<T>& a, T s) {
  return detail::map(a, "scalar_mul", [s](T x) { return x * s; });
}

template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::map(a, "relu", [](T x) { return x > T(0) ? x : T(0); });
}

template <std::floating_point T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::map(a, "exp", [](T x) { return std::exp(x); });
}

template <std::floating_point T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::map(a, "log", [](T x) { return std::log(x); });
}

template <std::floating_point T>
T clamp(T x, T lo, T hi) {
  return std::min(hi, std::max(lo, x));
}

template <std::floating_point T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return detail::map(a, "clamp", [lo, hi](T x) { return clamp(x, lo, hi); });
}

// ---------------------------------------------------------------------------
// Reductions.

template <std::floating_point T>
T reduce_sum(const Tensor<T>& t) {
  T s = 0;
  for (T v : t.data()) s += v;
  return s;
}

template <std::floating_point T>
T reduce_absmax(std::span<const T> values) {
  if (values.empty()) throw EmptyTensorError("reduce_absmax: empty tensor");
  T m = 0;
  for (T v : values) m = std::max(m, std::abs(v));
  return m;
}

template <std::floating_point T>
T reduce_absmax(const Tensor<T>& t) {
  return reduce_absmax(t.data());
}

// Accumulates in double regardless of T.
template <std::floating_point T>
T reduce_absmean(const Tensor<T>& t) {
  detail::require_non_empty(t, "reduce_absmean");
  double s = 0;
  for (T v : t.data()) s += std::abs(static_cast<double>(v));
  return static_cast<T>(s / static_cast<double>(t.numel()));
}

// Even counts return the mean of the two central order statistics.
template <std::floating_point T>
T reduce_absmedian(const Tensor<T>& t) {
  detail::require_non_empty(t, "reduce_absmedian");
  std::vector<T> mags(t.numel());
  std::transform(t.data().begin(), t.data().end(), mags.begin(),
                 [](T v) { return std::abs(v); });
  const std::size_t n = mags.size();
  const std::size_t hi = n / 2;
  std::nth_element(mags.begin(), mags.begin() + hi, mags.end());
  const T upper = mags[hi];
  if (n % 2 == 1) return upper;
  const T lower = *std::max_element(mags.begin(), mags.begin() + hi);
  return lower + (upper - lower) / T(2);
}

template <std::floating_point To, class From>
  requires std::is_arithmetic_v<From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> data(t.data().begin(), t.data().end());
  return Tensor<To>(t.shape(), std::move(data));
}

}  // namespace bitlinear
