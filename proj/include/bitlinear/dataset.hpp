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

#include <zlib.h>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bitlinear/random.hpp"
#include "bitlinear/tensor.hpp"

namespace bitlinear {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

enum class Split : std::uint8_t { Train, Test };

/// Images flattened to [N, rows * cols] with pixels in [0, 1].
struct Dataset {
  Tensor<float> images;
  std::vector<std::int32_t> labels;
  Split split = Split::Train;

  std::size_t size() const { return labels.size(); }
  std::size_t features() const { return images.rank() == 2 ? images.cols() : 0; }
};

/// Whole file contents; gzip streams are inflated, plain files pass through.
inline std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw DatasetError("file not found: " + path.string());
  }
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw DatasetError("cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> chunk(1 << 20);
  for (;;) {
    const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      int err = 0;
      std::string msg = gzerror(f, &err);
      gzclose(f);
      throw DatasetError("read error in " + path.string() + ": " + msg);
    }
    if (n == 0) break;
    out.insert(out.end(), chunk.begin(), chunk.begin() + n);
  }
  gzclose(f);
  return out;
}

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline std::uint32_t check_idx_header(std::span<const std::uint8_t> bytes, std::uint32_t magic,
                                      std::size_t header, std::string_view what) {
  if (bytes.size() < header) {
    throw DatasetError(std::string(what) + ": truncated header, expected " +
                       std::to_string(header) + " bytes, got " + std::to_string(bytes.size()));
  }
  const std::uint32_t got = read_be32(bytes, 0);
  if (got != magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "magic 0x%08X, expected 0x%08X", got, magic);
    throw DatasetError(std::string(what) + ": wrong " + buf);
  }
  return read_be32(bytes, 4);
}

inline void check_payload(std::span<const std::uint8_t> bytes, std::size_t expected,
                          std::string_view what) {
  if (bytes.size() < expected) {
    throw DatasetError(std::string(what) + ": truncated payload, expected " +
                       std::to_string(expected) + " bytes, got " + std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw DatasetError(std::string(what) + ": " + std::to_string(bytes.size() - expected) +
                       " trailing bytes after payload");
  }
}

}  // namespace detail

/// Big-endian IDX3 image file: magic 0x00000803, dims [N, rows, cols].
inline Tensor<float> parse_idx_images(std::span<const std::uint8_t> bytes) {
  const std::uint32_t n = detail::check_idx_header(bytes, kIdxImageMagic, 16, "idx images");
  const std::size_t rows = detail::read_be32(bytes, 8);
  const std::size_t cols = detail::read_be32(bytes, 12);
  const std::size_t features = rows * cols;
  detail::check_payload(bytes, 16 + std::size_t{n} * features, "idx images");
  Tensor<float> images({n, features});
  auto dst = images.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(bytes[16 + i]) / 255.0f;
  return images;
}

/// Big-endian IDX1 label file: magic 0x00000801, dims [N].
inline std::vector<std::int32_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  const std::uint32_t n = detail::check_idx_header(bytes, kIdxLabelMagic, 8, "idx labels");
  detail::check_payload(bytes, 8 + std::size_t{n}, "idx labels");
  std::vector<std::int32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = bytes[8 + i];
  return labels;
}

inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, Split split = Split::Train) {
  const auto image_bytes = read_maybe_gzip(images_path);
  const auto label_bytes = read_maybe_gzip(labels_path);
  Dataset d;
  try {
    d.images = parse_idx_images(image_bytes);
  } catch (const DatasetError& e) {
    throw DatasetError(images_path.string() + ": " + e.what());
  }
  try {
    d.labels = parse_idx_labels(label_bytes);
  } catch (const DatasetError& e) {
    throw DatasetError(labels_path.string() + ": " + e.what());
  }
  if (d.images.rows() != d.labels.size()) {
    throw DatasetError("image/label count mismatch: " + std::to_string(d.images.rows()) +
                       " images vs " + std::to_string(d.labels.size()) + " labels");
  }
  d.split = split;
  return d;
}

/// FNV-1a over the float bit patterns and labels, little-endian byte order.
inline std::uint64_t dataset_checksum(const Dataset& d) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (float v : d.images.data()) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    mix(bits);
  }
  for (std::int32_t l : d.labels) mix(static_cast<std::uint32_t>(l));
  return h;
}

struct Batch {
  Tensor<float> images;
  std::vector<std::int32_t> labels;
};

/// Seeded mini-batch iteration. Every epoch is a fresh permutation drawn from
/// derive_seed(seed, epoch) and visits each sample once, final short batch
/// included.
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                bool shuffle = true)
      : data_(&data), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    start_epoch(0);
  }

  void start_epoch(std::size_t epoch) {
    epoch_ = epoch;
    cursor_ = 0;
    order_.resize(data_->size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (shuffle_) {
      Rng rng(derive_seed(seed_, epoch));
      rng.shuffle(std::span<std::size_t>(order_));
    }
  }

  std::size_t epoch() const { return epoch_; }
  std::size_t batch_size() const { return batch_size_; }
  std::size_t batches_per_epoch() const { return (data_->size() + batch_size_ - 1) / batch_size_; }
  const std::vector<std::size_t>& order() const { return order_; }

  bool next(Batch& out) {
    if (cursor_ >= order_.size()) return false;
    const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
    const std::size_t f = data_->features();
    out.images = Tensor<float>({n, f});
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t src = order_[cursor_ + i];
      auto from = data_->images.row(src);
      std::copy(from.begin(), from.end(), out.images.row(i).begin());
      out.labels[i] = data_->labels[src];
    }
    cursor_ += n;
    return true;
  }

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace bitlinear
