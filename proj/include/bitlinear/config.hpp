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

// Strict JSON run configuration. Every object accepts only its listed keys;
// anything else is a ConfigError naming the offending key.
//
// {
//   "model":  {"widths": [784,128,64,10], "mode": "mean", "bias": true,
//              "bias_after_dequant": false, "norm": true},
//   "quant":  {"k": 8, "epsilon": 1e-5, "measure": "mean"},
//   "train":  {"lr": 0.001, "weight_decay": 0.0, "epochs": 10, "batch_size": 128,
//              "seed": 0, "decay_style": "decoupled"},
//   "data":   {"train_images": "...", "train_labels": "...",
//              "test_images": "...", "test_labels": "..."},
//   "output": {"metrics_csv": "...", "checkpoint": "..."}
// }
//
// Relative data and output paths resolve against the config file's directory.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "bitlinear/model.hpp"
#include "bitlinear/trainer.hpp"

namespace bitlinear {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataPaths {
  std::filesystem::path train_images = "data/mnist/train-images-idx3-ubyte.gz";
  std::filesystem::path train_labels = "data/mnist/train-labels-idx1-ubyte.gz";
  std::filesystem::path test_images = "data/mnist/t10k-images-idx3-ubyte.gz";
  std::filesystem::path test_labels = "data/mnist/t10k-labels-idx1-ubyte.gz";
};

struct OutputPaths {
  std::filesystem::path metrics_csv;
  std::filesystem::path checkpoint;
};

struct RunConfig {
  ModelSpec model;
  TrainConfig train;
  DataPaths data;
  OutputPaths output;
};

inline DecayStyle parse_decay_style(std::string_view s) {
  if (s == "decoupled") return DecayStyle::Decoupled;
  if (s == "coupled") return DecayStyle::Coupled;
  throw std::invalid_argument("unknown decay style '" + std::string(s) +
                              "' (expected decoupled|coupled)");
}

namespace detail {

using Json = nlohmann::json;

inline void only_keys(const Json& obj, std::string_view where,
                      std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (std::string_view a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string(where) + "." + key + ": unknown key");
  }
}

template <class T>
T get_as(const Json& obj, std::string_view where, const char* key) {
  const Json& v = obj.at(key);
  const std::string name = std::string(where) + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(name + ": expected a boolean");
    return v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(name + ": expected a string");
    return v.get<std::string>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(name + ": expected a number");
    return v.get<T>();
  } else {
    if (!v.is_number_unsigned()) throw ConfigError(name + ": expected a non-negative integer");
    return v.get<T>();
  }
}

inline std::filesystem::path resolve(const std::filesystem::path& base,
                                     const std::filesystem::path& p) {
  return p.empty() || p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace detail

/// Parses a config document. `base_dir` anchors relative paths.
inline RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {}) {
  using detail::get_as;
  using detail::Json;
  Json root;
  try {
    root = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  detail::only_keys(root, "config", {"model", "quant", "train", "data", "output"});
  RunConfig cfg;
  std::string measure;

  if (root.contains("model")) {
    const Json& m = root["model"];
    detail::only_keys(m, "model", {"widths", "mode", "bias", "bias_after_dequant", "norm"});
    if (m.contains("widths")) {
      if (!m["widths"].is_array()) throw ConfigError("model.widths: expected an array");
      cfg.model.widths.clear();
      for (const Json& w : m["widths"]) {
        if (!w.is_number_unsigned() || w.get<std::size_t>() == 0) {
          throw ConfigError("model.widths: entries must be positive integers");
        }
        cfg.model.widths.push_back(w.get<std::size_t>());
      }
    }
    if (m.contains("mode")) {
      try {
        cfg.model.mode = parse_network_mode(get_as<std::string>(m, "model", "mode"));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("model.mode: ") + e.what());
      }
    }
    if (m.contains("bias")) cfg.model.bias = get_as<bool>(m, "model", "bias");
    if (m.contains("bias_after_dequant"))
      cfg.model.bias_after_dequant = get_as<bool>(m, "model", "bias_after_dequant");
    if (m.contains("norm")) cfg.model.norm = get_as<bool>(m, "model", "norm");
  }

  if (root.contains("quant")) {
    const Json& q = root["quant"];
    detail::only_keys(q, "quant", {"k", "epsilon", "measure"});
    if (q.contains("k")) cfg.model.bits = static_cast<int>(get_as<unsigned>(q, "quant", "k"));
    if (q.contains("epsilon")) cfg.model.epsilon = get_as<double>(q, "quant", "epsilon");
    if (q.contains("measure")) measure = get_as<std::string>(q, "quant", "measure");
  }
  // The measure is implied by a ternary mode; if both are given they must agree.
  if (!measure.empty()) {
    if (measure != "mean" && measure != "median")
      throw ConfigError("quant.measure: expected mean|median");
    if (cfg.model.mode != NetworkMode::FullPrecision16 && to_string(cfg.model.mode) != measure)
      throw ConfigError("quant.measure: '" + measure + "' contradicts model.mode '" +
                        std::string(to_string(cfg.model.mode)) + "'");
  }

  if (root.contains("train")) {
    const Json& t = root["train"];
    detail::only_keys(t, "train",
                      {"lr", "weight_decay", "epochs", "batch_size", "seed", "decay_style"});
    if (t.contains("lr")) cfg.train.learning_rate = get_as<double>(t, "train", "lr");
    if (t.contains("weight_decay"))
      cfg.train.weight_decay = get_as<double>(t, "train", "weight_decay");
    if (t.contains("epochs")) cfg.train.epochs = get_as<std::size_t>(t, "train", "epochs");
    if (t.contains("batch_size"))
      cfg.train.batch_size = get_as<std::size_t>(t, "train", "batch_size");
    if (t.contains("seed")) cfg.train.seed = get_as<std::uint64_t>(t, "train", "seed");
    if (t.contains("decay_style")) {
      try {
        cfg.train.decay_style = parse_decay_style(get_as<std::string>(t, "train", "decay_style"));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("train.decay_style: ") + e.what());
      }
    }
  }

  if (root.contains("data")) {
    const Json& d = root["data"];
    detail::only_keys(d, "data", {"train_images", "train_labels", "test_images", "test_labels"});
    if (d.contains("train_images")) cfg.data.train_images = get_as<std::string>(d, "data", "train_images");
    if (d.contains("train_labels")) cfg.data.train_labels = get_as<std::string>(d, "data", "train_labels");
    if (d.contains("test_images")) cfg.data.test_images = get_as<std::string>(d, "data", "test_images");
    if (d.contains("test_labels")) cfg.data.test_labels = get_as<std::string>(d, "data", "test_labels");
  }
  cfg.data.train_images = detail::resolve(base_dir, cfg.data.train_images);
  cfg.data.train_labels = detail::resolve(base_dir, cfg.data.train_labels);
  cfg.data.test_images = detail::resolve(base_dir, cfg.data.test_images);
  cfg.data.test_labels = detail::resolve(base_dir, cfg.data.test_labels);

  if (root.contains("output")) {
    const Json& o = root["output"];
    detail::only_keys(o, "output", {"metrics_csv", "checkpoint"});
    if (o.contains("metrics_csv"))
      cfg.output.metrics_csv = detail::resolve(base_dir, get_as<std::string>(o, "output", "metrics_csv"));
    if (o.contains("checkpoint"))
      cfg.output.checkpoint = detail::resolve(base_dir, get_as<std::string>(o, "output", "checkpoint"));
  }

  try {
    cfg.model.validate();
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

}  // namespace bitlinear
