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

// Binary formats, all multi-byte fields little-endian.
//
// Checkpoint (full shadow-weight state):
//   "BL58"  u32 version=1  u8 mode(0=16,1=mean,2=median)  u8 bits
//   u8 model flags(bit0 bias, bit1 norm, bit2 bias_after_dequant)  u8 reserved=0
//   f64 epsilon  u32 layer_count
//   per layer: u32 in  u32 out  u8 flags(bit0 bias, bit1 norm)
//              f32 weight[in*out] (row-major [in, out])
//              f32 bias[out]?  f32 norm_gain[in]?  f32 norm_bias[in]?
//
// Ternary export (inference only):
//   "BL58T"  u32 version=1  u8 measure(0=mean,1=median)  u8 bits(=8)
//   u8 model flags(bit2 bias_after_dequant)  u8 reserved=0  f64 epsilon  u32 layer_count
//   per layer: u32 in  u32 out  u8 flags(bit0 bias, bit1 norm)  f32 w_scale
//              u8 packed[ceil(in*out/4)] (PackedTernary layout)
//              f32 bias[out]?  f32 norm_gain[in]?  f32 norm_bias[in]?

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bitlinear/model.hpp"
#include "bitlinear/ternary_kernel.hpp"

namespace bitlinear {

class ModelIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class MagicError : public ModelIoError {
 public:
  using ModelIoError::ModelIoError;
};
class VersionError : public ModelIoError {
 public:
  using ModelIoError::ModelIoError;
};
class TruncatedError : public ModelIoError {
 public:
  using ModelIoError::ModelIoError;
};
class FormatError : public ModelIoError {
 public:
  using ModelIoError::ModelIoError;
};

inline constexpr std::string_view kCheckpointMagic = "BL58";
inline constexpr std::string_view kTernaryMagic = "BL58T";
inline constexpr std::uint32_t kFormatVersion = 1;

namespace io {

inline constexpr std::uint8_t kModelBias = 1u << 0;
inline constexpr std::uint8_t kModelNorm = 1u << 1;
inline constexpr std::uint8_t kModelBiasAfterDequant = 1u << 2;
inline constexpr std::uint8_t kLayerBias = 1u << 0;
inline constexpr std::uint8_t kLayerNorm = 1u << 1;

class Writer {
 public:
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void text(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32s(std::span<const float> v) {
    for (float x : v) f32(x);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::span<const std::uint8_t> bytes(std::size_t n, std::string_view what) {
    if (n > data_.size() - pos_) {
      throw TruncatedError("truncated file reading " + std::string(what) + ": need " +
                           std::to_string(n) + " bytes, " + std::to_string(data_.size() - pos_) +
                           " left");
    }
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(std::string_view what) { return bytes(1, what)[0]; }
  std::uint32_t u32(std::string_view what) {
    auto b = bytes(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[i]} << (8 * i);
    return v;
  }
  std::uint64_t u64(std::string_view what) {
    auto b = bytes(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
    return v;
  }
  float f32(std::string_view what) { return std::bit_cast<float>(u32(what)); }
  double f64(std::string_view what) { return std::bit_cast<double>(u64(what)); }
  std::vector<float> f32s(std::size_t n, std::string_view what) {
    if (n > (data_.size() - pos_) / 4) {
      throw TruncatedError("truncated file reading " + std::string(what) + ": need " +
                           std::to_string(n) + " floats");
    }
    std::vector<float> v(n);
    for (float& x : v) x = f32(what);
    return v;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelIoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes a sibling temp file then renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path,
                              std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ModelIoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ModelIoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void check_magic(Reader& r, std::string_view magic) {
  if (r.remaining() < magic.size()) {
    throw MagicError("file too short for magic '" + std::string(magic) + "'");
  }
  auto got = r.bytes(magic.size(), "magic");
  if (!std::equal(got.begin(), got.end(), magic.begin())) {
    throw MagicError("bad magic, expected '" + std::string(magic) + "'");
  }
}

inline void check_version(Reader& r) {
  const std::uint32_t v = r.u32("version");
  if (v != kFormatVersion) {
    throw VersionError("unsupported format version " + std::to_string(v) + " (expected " +
                       std::to_string(kFormatVersion) + ")");
  }
}

// Rejects extents whose payload could not possibly fit in the rest of the file.
inline void check_extents(std::uint32_t in, std::uint32_t out, std::size_t bytes_per_weight4,
                          const Reader& r) {
  if (in == 0 || out == 0) throw FormatError("layer extents must be positive");
  const std::uint64_t n = std::uint64_t{in} * std::uint64_t{out};
  if (n > (std::uint64_t{1} << 40) || (n * bytes_per_weight4 + 3) / 4 > r.remaining()) {
    throw FormatError("layer extents " + std::to_string(in) + "x" + std::to_string(out) +
                      " exceed the file size");
  }
}

}  // namespace io

inline std::vector<std::uint8_t> checkpoint_bytes(const Classifier<float>& model) {
  const ModelSpec& spec = model.spec();
  io::Writer w;
  w.text(kCheckpointMagic);
  w.u32(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(spec.mode));
  w.u8(static_cast<std::uint8_t>(spec.bits));
  w.u8(static_cast<std::uint8_t>((spec.bias ? io::kModelBias : 0) |
                                 (spec.norm ? io::kModelNorm : 0) |
                                 (spec.bias_after_dequant ? io::kModelBiasAfterDequant : 0)));
  w.u8(0);
  w.f64(spec.epsilon);
  w.u32(static_cast<std::uint32_t>(model.layers().size()));
  for (const auto& l : model.layers()) {
    w.u32(static_cast<std::uint32_t>(l.in_features()));
    w.u32(static_cast<std::uint32_t>(l.out_features()));
    w.u8(static_cast<std::uint8_t>((spec.bias ? io::kLayerBias : 0) |
                                   (spec.norm ? io::kLayerNorm : 0)));
    w.f32s(l.weight().value.data());
    if (spec.bias) w.f32s(l.bias().value.data());
    if (spec.norm) {
      w.f32s(l.norm_gain().value.data());
      w.f32s(l.norm_bias().value.data());
    }
  }
  return w.take();
}

inline Classifier<float> parse_checkpoint(std::span<const std::uint8_t> bytes) {
  // "BL58" is a prefix of "BL58T"; name the mix-up instead of misreading a version.
  if (bytes.size() >= kTernaryMagic.size() &&
      std::equal(kTernaryMagic.begin(), kTernaryMagic.end(), bytes.begin())) {
    throw MagicError("ternary export given where a checkpoint is expected");
  }
  io::Reader r(bytes);
  io::check_magic(r, kCheckpointMagic);
  io::check_version(r);
  ModelSpec spec;
  const std::uint8_t mode = r.u8("mode");
  if (mode > 2) throw FormatError("unknown mode byte " + std::to_string(mode));
  spec.mode = static_cast<NetworkMode>(mode);
  spec.bits = r.u8("bits");
  const std::uint8_t flags = r.u8("model flags");
  if (flags & ~(io::kModelBias | io::kModelNorm | io::kModelBiasAfterDequant)) {
    throw FormatError("unknown model flag bits");
  }
  spec.bias = flags & io::kModelBias;
  spec.norm = flags & io::kModelNorm;
  spec.bias_after_dequant = flags & io::kModelBiasAfterDequant;
  if (r.u8("reserved") != 0) throw FormatError("reserved byte must be zero");
  spec.epsilon = r.f64("epsilon");
  const std::uint32_t n_layers = r.u32("layer count");
  if (n_layers == 0 || n_layers > r.remaining() / 9) throw FormatError("invalid layer count");

  struct Raw {
    std::vector<float> weight, bias, gain, beta;
  };
  std::vector<Raw> raw(n_layers);
  spec.widths.clear();
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const std::uint32_t in = r.u32("layer in");
    const std::uint32_t out = r.u32("layer out");
    io::check_extents(in, out, 16, r);
    const std::uint8_t lf = r.u8("layer flags");
    if (bool(lf & io::kLayerBias) != spec.bias || bool(lf & io::kLayerNorm) != spec.norm) {
      throw FormatError("layer flags disagree with model flags");
    }
    if (i == 0) spec.widths.push_back(in);
    if (spec.widths.back() != in) throw FormatError("layer extents do not chain");
    spec.widths.push_back(out);
    raw[i].weight = r.f32s(std::size_t{in} * out, "weights");
    if (spec.bias) raw[i].bias = r.f32s(out, "bias");
    if (spec.norm) {
      raw[i].gain = r.f32s(in, "norm gain");
      raw[i].beta = r.f32s(in, "norm bias");
    }
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last layer");
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid model header: ") + e.what());
  }

  Classifier<float> model(spec, 0);
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    auto& l = model.layers()[i];
    std::copy(raw[i].weight.begin(), raw[i].weight.end(), l.weight().value.data().begin());
    if (spec.bias) std::copy(raw[i].bias.begin(), raw[i].bias.end(), l.bias().value.data().begin());
    if (spec.norm) {
      std::copy(raw[i].gain.begin(), raw[i].gain.end(), l.norm_gain().value.data().begin());
      std::copy(raw[i].beta.begin(), raw[i].beta.end(), l.norm_bias().value.data().begin());
    }
  }
  return model;
}

inline void save_checkpoint(const Classifier<float>& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, checkpoint_bytes(model));
}

inline Classifier<float> load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(io::read_file(path));
}

inline std::vector<std::uint8_t> ternary_bytes(const TernaryNetwork<float>& net) {
  if (net.layers.empty()) throw ModelIoError("export: network has no layers");
  const TernaryLayer<float>& first = net.layers.front();
  if (first.quant.bits != 8) throw ModelIoError("export: packed format requires 8-bit activations");
  io::Writer w;
  w.text(kTernaryMagic);
  w.u32(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(first.quant.measure));
  w.u8(static_cast<std::uint8_t>(first.quant.bits));
  w.u8(first.bias_after_dequant ? io::kModelBiasAfterDequant : 0);
  w.u8(0);
  w.f64(first.quant.epsilon);
  w.u32(static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    w.u32(static_cast<std::uint32_t>(l.in_features()));
    w.u32(static_cast<std::uint32_t>(l.out_features()));
    w.u8(static_cast<std::uint8_t>((l.bias ? io::kLayerBias : 0) |
                                   (l.norm_gain ? io::kLayerNorm : 0)));
    w.f32(l.w_scale);
    w.bytes(l.weights.bytes);
    if (l.bias) w.f32s(l.bias->data());
    if (l.norm_gain) {
      w.f32s(l.norm_gain->data());
      w.f32s(l.norm_bias->data());
    }
  }
  return w.take();
}

inline TernaryNetwork<float> parse_ternary(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  io::check_magic(r, kTernaryMagic);
  io::check_version(r);
  QuantConfig quant;
  const std::uint8_t measure = r.u8("measure");
  if (measure > 1) throw FormatError("unknown measure byte " + std::to_string(measure));
  quant.measure = static_cast<Measure>(measure);
  quant.bits = r.u8("bits");
  if (quant.bits != 8) throw FormatError("packed format requires 8-bit activations");
  const std::uint8_t flags = r.u8("model flags");
  if (flags & ~io::kModelBiasAfterDequant) throw FormatError("unknown model flag bits");
  if (r.u8("reserved") != 0) throw FormatError("reserved byte must be zero");
  quant.epsilon = r.f64("epsilon");
  try {
    quant.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  const std::uint32_t n_layers = r.u32("layer count");
  if (n_layers == 0 || n_layers > r.remaining() / 13) throw FormatError("invalid layer count");

  TernaryNetwork<float> net;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const std::uint32_t in = r.u32("layer in");
    const std::uint32_t out = r.u32("layer out");
    io::check_extents(in, out, 1, r);
    if (i > 0 && net.layers.back().out_features() != in) {
      throw FormatError("layer extents do not chain");
    }
    const std::uint8_t lf = r.u8("layer flags");
    if (lf & ~(io::kLayerBias | io::kLayerNorm)) throw FormatError("unknown layer flag bits");
    TernaryLayer<float> l;
    l.quant = quant;
    l.bias_after_dequant = flags & io::kModelBiasAfterDequant;
    l.w_scale = r.f32("w_scale");
    if (!(l.w_scale > 0.0f) || !std::isfinite(l.w_scale)) throw FormatError("w_scale must be positive");
    l.weights.rows = in;
    l.weights.cols = out;
    auto packed = r.bytes(PackedTernary::byte_count(in, out), "packed weights");
    l.weights.bytes.assign(packed.begin(), packed.end());
    try {
      validate_packed(l.weights);
    } catch (const PackError& e) {
      throw FormatError(std::string("layer ") + std::to_string(i) + ": " + e.what());
    }
    if (lf & io::kLayerBias) l.bias = Tensor<float>({out}, r.f32s(out, "bias"));
    if (lf & io::kLayerNorm) {
      l.norm_gain = Tensor<float>({in}, r.f32s(in, "norm gain"));
      l.norm_bias = Tensor<float>({in}, r.f32s(in, "norm bias"));
    }
    net.layers.push_back(std::move(l));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last layer");
  return net;
}

inline void export_ternary(const Classifier<float>& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, ternary_bytes(export_network(model)));
}

inline TernaryNetwork<float> load_ternary(const std::filesystem::path& path) {
  return parse_ternary(io::read_file(path));
}

enum class ModelFileKind { Checkpoint, Ternary, Unknown };

inline ModelFileKind sniff_model_file(std::span<const std::uint8_t> bytes) {
  auto starts = [&](std::string_view m) {
    return bytes.size() >= m.size() && std::equal(m.begin(), m.end(), bytes.begin());
  };
  if (starts(kTernaryMagic)) return ModelFileKind::Ternary;
  if (starts(kCheckpointMagic)) return ModelFileKind::Checkpoint;
  return ModelFileKind::Unknown;
}

}  // namespace bitlinear
