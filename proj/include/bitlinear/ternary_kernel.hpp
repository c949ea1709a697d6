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
#include <array>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "bitlinear/tensor.hpp"

namespace bitlinear {

class PackError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// 2-bit codes, first weight of each group of four in the low bit pair.
inline constexpr std::uint8_t kCodeZero = 0b00;
inline constexpr std::uint8_t kCodePlus = 0b01;
inline constexpr std::uint8_t kCodeMinus = 0b10;
inline constexpr std::uint8_t kCodeReserved = 0b11;

// |sum| <= 128 * K must stay below 2^31.
inline constexpr std::size_t kMaxInnerDim = std::size_t{1} << 24;

/// Ternary [rows = K, cols = N] matrix at 2 bits per weight. Weights are
/// linearised column-major (index n * K + k) so each output column's weights
/// stream along K, four per byte.
struct PackedTernary {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bytes;

  static constexpr std::size_t byte_count(std::size_t rows, std::size_t cols) {
    return (rows * cols + 3) / 4;
  }

  std::uint8_t code(std::size_t k, std::size_t n) const {
    const std::size_t i = n * rows + k;
    return (bytes[i / 4] >> (2 * (i % 4))) & 0b11;
  }

  bool operator==(const PackedTernary&) const = default;
};

inline std::uint8_t encode_ternary(std::int8_t w) {
  switch (w) {
    case 0: return kCodeZero;
    case 1: return kCodePlus;
    case -1: return kCodeMinus;
    default: throw PackError("pack: non-ternary weight " + std::to_string(int{w}));
  }
}

inline std::int8_t decode_ternary(std::uint8_t code) {
  switch (code) {
    case kCodeZero: return 0;
    case kCodePlus: return 1;
    case kCodeMinus: return -1;
    default: throw PackError("unpack: reserved code 0b11");
  }
}

/// Rejects any byte carrying the reserved code, including in tail padding.
inline void validate_packed(const PackedTernary& p) {
  if (p.bytes.size() != PackedTernary::byte_count(p.rows, p.cols)) {
    throw PackError("packed ternary: expected " +
                    std::to_string(PackedTernary::byte_count(p.rows, p.cols)) + " bytes, got " +
                    std::to_string(p.bytes.size()));
  }
  const std::size_t n = p.rows * p.cols;
  for (std::size_t b = 0; b < p.bytes.size(); ++b) {
    for (std::size_t j = 0; j < 4; ++j) {
      const std::uint8_t c = (p.bytes[b] >> (2 * j)) & 0b11;
      if (c == kCodeReserved) {
        throw PackError("packed ternary: reserved code 0b11 in byte " + std::to_string(b));
      }
      if (b * 4 + j >= n && c != kCodeZero) {
        throw PackError("packed ternary: non-zero padding in final byte");
      }
    }
  }
}

inline PackedTernary pack(const IntTensor<std::int8_t>& w) {
  detail::require_matrix(w, "pack");
  if (w.rows() > kMaxInnerDim) {
    throw std::overflow_error("pack: inner dimension exceeds 2^24 accumulator bound");
  }
  PackedTernary p{w.rows(), w.cols(), {}};
  p.bytes.assign(PackedTernary::byte_count(p.rows, p.cols), 0);
  for (std::size_t n = 0; n < p.cols; ++n) {
    for (std::size_t k = 0; k < p.rows; ++k) {
      const std::size_t i = n * p.rows + k;
      p.bytes[i / 4] |= static_cast<std::uint8_t>(encode_ternary(w(k, n)) << (2 * (i % 4)));
    }
  }
  return p;
}

inline IntTensor<std::int8_t> unpack(const PackedTernary& p) {
  validate_packed(p);
  IntTensor<std::int8_t> w({p.rows, p.cols});
  for (std::size_t n = 0; n < p.cols; ++n)
    for (std::size_t k = 0; k < p.rows; ++k) w(k, n) = decode_ternary(p.code(k, n));
  return w;
}

namespace detail {

struct MaskEntry {
  std::int8_t plus[4];
  std::int8_t minus[4];
};

// Byte -> four all-ones/all-zero masks per sign. Reserved codes map to zero
// masks; validate_packed rejects them before they get here.
inline constexpr auto kMaskTable = [] {
  std::array<MaskEntry, 256> t{};
  for (int b = 0; b < 256; ++b) {
    for (int j = 0; j < 4; ++j) {
      const int c = (b >> (2 * j)) & 0b11;
      t[b].plus[j] = c == kCodePlus ? std::int8_t(-1) : std::int8_t(0);
      t[b].minus[j] = c == kCodeMinus ? std::int8_t(-1) : std::int8_t(0);
    }
  }
  return t;
}();

inline void decode_one(const std::uint8_t* bytes, std::size_t i, std::int8_t* plus,
                       std::int8_t* minus) {
  const std::uint8_t c = (bytes[i >> 2] >> ((i & 3) << 1)) & 0b11;
  *plus = c == kCodePlus ? std::int8_t(-1) : std::int8_t(0);
  *minus = c == kCodeMinus ? std::int8_t(-1) : std::int8_t(0);
}

// One output column: decode into add/subtract masks once, then sweep the
// batch. Each term is (x & plus) - (x & minus); zero codes are skipped by
// both masks being clear.
inline void ternary_columns(const std::int8_t* x, std::size_t batch, std::size_t k_dim,
                            const PackedTernary& w, std::size_t n_begin, std::size_t n_end,
                            std::int32_t* y) {
  std::vector<std::int8_t> plus(k_dim), minus(k_dim);
  const std::size_t n_cols = w.cols;
  const std::uint8_t* bytes = w.bytes.data();
  for (std::size_t n = n_begin; n < n_end; ++n) {
    std::size_t i = n * k_dim;
    std::size_t k = 0;
    // Unaligned head, then whole bytes through the lookup table, then the tail.
    for (; k < k_dim && (i & 3) != 0; ++k, ++i) decode_one(bytes, i, plus.data() + k, minus.data() + k);
    for (; k + 4 <= k_dim; k += 4, i += 4) {
      const auto& e = kMaskTable[bytes[i >> 2]];
      std::memcpy(plus.data() + k, e.plus, 4);
      std::memcpy(minus.data() + k, e.minus, 4);
    }
    for (; k < k_dim; ++k, ++i) decode_one(bytes, i, plus.data() + k, minus.data() + k);
    const std::int8_t* pp = plus.data();
    const std::int8_t* mm = minus.data();
    for (std::size_t b = 0; b < batch; ++b) {
      const std::int8_t* xr = x + b * k_dim;
      std::int32_t acc = 0;
      for (std::size_t k = 0; k < k_dim; ++k) {
        acc += static_cast<std::int32_t>(xr[k] & pp[k]) - static_cast<std::int32_t>(xr[k] & mm[k]);
      }
      y[b * n_cols + n] = acc;
    }
  }
}

}  // namespace detail

/// Multiplication-free y[b, n] = sum_k s(w[k, n]) * x[b, k] with s in {-1, 0, +1}.
/// Exact; the result does not depend on `threads` (0 = hardware concurrency).
inline IntTensor<std::int32_t> ternary_matmul(const IntTensor<std::int8_t>& x,
                                              const PackedTernary& w, unsigned threads = 1) {
  detail::require_matrix(x, "ternary_matmul");
  if (x.cols() != w.rows) {
    throw ShapeError("ternary_matmul: activation width " + std::to_string(x.cols()) +
                     " != weight rows " + std::to_string(w.rows));
  }
  if (w.rows > kMaxInnerDim) {
    throw std::overflow_error("ternary_matmul: inner dimension exceeds 2^24 accumulator bound");
  }
  if (w.bytes.size() != PackedTernary::byte_count(w.rows, w.cols)) {
    throw PackError("ternary_matmul: packed payload has wrong length");
  }
  const std::size_t batch = x.rows();
  IntTensor<std::int32_t> y({batch, w.cols});
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(w.cols, 1)));
  const std::int8_t* px = x.data().data();
  std::int32_t* py = y.data().data();
  if (threads <= 1) {
    detail::ternary_columns(px, batch, w.rows, w, 0, w.cols, py);
    return y;
  }
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (w.cols + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t lo = t * chunk;
      const std::size_t hi = std::min(w.cols, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back([=, &w] { detail::ternary_columns(px, batch, w.rows, w, lo, hi, py); });
    }
  }
  return y;
}

/// Multiply-based reference over unpacked integer matrices.
template <std::signed_integral A, std::signed_integral B>
IntTensor<std::int64_t> reference_int_matmul(const IntTensor<A>& x, const IntTensor<B>& w) {
  detail::require_matrix(x, "reference_int_matmul");
  detail::require_matrix(w, "reference_int_matmul");
  if (x.cols() != w.rows()) throw ShapeError("reference_int_matmul: inner extents differ");
  IntTensor<std::int64_t> y({x.rows(), w.cols()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      std::int64_t s = 0;
      for (std::size_t k = 0; k < x.cols(); ++k)
        s += static_cast<std::int64_t>(x(i, k)) * static_cast<std::int64_t>(w(k, j));
      y(i, j) = s;
    }
  return y;
}

}  // namespace bitlinear
