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
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "bitlinear/autodiff.hpp"
#include "bitlinear/dataset.hpp"
#include "bitlinear/model.hpp"
#include "bitlinear/optimizer.hpp"
#include "bitlinear/random.hpp"

namespace bitlinear {

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t epoch, std::size_t step)
      : std::runtime_error(what), epoch_(epoch), step_(step) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }

 private:
  std::size_t epoch_;
  std::size_t step_;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  DecayStyle decay_style = DecayStyle::Decoupled;
  double divergence_loss = 1e4;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw std::invalid_argument("train: learning rate must be positive");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
      throw std::invalid_argument("train: weight decay must be >= 0");
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  }

  AdamConfig adam() const {
    return {learning_rate, weight_decay, beta1, beta2, adam_epsilon, decay_style};
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0;
  double test_acc = 0;
  double seconds = 0;
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
  double final_accuracy = 0;
  double seconds = 0;
  std::size_t steps = 0;
};

/// Top-1 accuracy in percent, per sample, over the whole split.
template <class Model>
double evaluate(const Model& model, const Dataset& data, std::size_t batch_size = 1000) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch size must be positive");
  BatchIterator it(data, batch_size, 0, /*shuffle=*/false);
  Batch batch;
  std::size_t correct = 0;
  while (it.next(batch)) {
    const auto pred = predict(model.logits(batch.images));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

template <class Model>
std::vector<std::int32_t> predict_all(const Model& model, const Dataset& data,
                                      std::size_t batch_size = 1000) {
  BatchIterator it(data, batch_size, 0, /*shuffle=*/false);
  Batch batch;
  std::vector<std::int32_t> out;
  out.reserve(data.size());
  while (it.next(batch)) {
    const auto pred = predict(model.logits(batch.images));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

struct TrainResult {
  Classifier<float> model;
  RunMetrics metrics;
};

/// Adam on the shadow weights for epochs * ceil(N / batch) steps, with a test
/// evaluation after each epoch. Throws DivergenceError when the batch loss
/// exceeds the divergence threshold or anything turns non-finite.
inline TrainResult train(const ModelSpec& spec, const TrainConfig& cfg, const Dataset& train_data,
                         const Dataset& test_data, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  spec.validate();
  if (train_data.size() == 0) throw std::invalid_argument("train: empty training set");
  if (train_data.features() != spec.widths.front()) {
    throw std::invalid_argument("train: data has " + std::to_string(train_data.features()) +
                                " features, model expects " + std::to_string(spec.widths.front()));
  }
  using clock = std::chrono::steady_clock;
  const auto run_start = clock::now();

  TrainResult result{Classifier<float>(spec, derive_seed(cfg.seed, seed_stream::kInit)), {}};
  Classifier<float>& model = result.model;
  Adam<float> opt(model.parameters(), cfg.adam());
  BatchIterator batches(train_data, cfg.batch_size, derive_seed(cfg.seed, seed_stream::kShuffle));
  Batch batch;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto epoch_start = clock::now();
    batches.start_epoch(epoch);
    double loss_sum = 0;
    std::size_t n_batches = 0;
    while (batches.next(batch)) {
      opt.zero_grad();
      double loss = 0;
      try {
        Tape<float> tape;
        Var x = tape.constant(batch.images);
        Var logits = model.forward(tape, x);
        Var l = ad::softmax_cross_entropy(tape, logits, std::span<const std::int32_t>(batch.labels));
        loss = tape.value(l)[0];
        if (!(loss <= cfg.divergence_loss)) {
          throw DivergenceError("training diverged: loss " + std::to_string(loss), epoch + 1,
                                opt.steps());
        }
        tape.backward(l);
      } catch (const NonFiniteError& e) {
        throw DivergenceError(std::string("training diverged: ") + e.what(), epoch + 1,
                              opt.steps());
      }
      opt.step();
      loss_sum += loss;
      ++n_batches;
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = loss_sum / static_cast<double>(n_batches);
    try {
      m.test_acc = test_data.size() ? evaluate(model, test_data) : 0.0;
    } catch (const NonFiniteError& e) {
      throw DivergenceError(std::string("evaluation diverged: ") + e.what(), epoch + 1,
                            opt.steps());
    }
    m.seconds = std::chrono::duration<double>(clock::now() - epoch_start).count();
    result.metrics.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  result.metrics.steps = opt.steps();
  result.metrics.final_accuracy = result.metrics.epochs.back().test_acc;
  result.metrics.seconds = std::chrono::duration<double>(clock::now() - run_start).count();
  return result;
}

// ---------------------------------------------------------------------------
// CSV outputs.

inline std::string metrics_csv(const RunMetrics& m, bool with_seconds = true) {
  std::ostringstream os;
  os << (with_seconds ? "epoch,train_loss,test_acc,seconds\n" : "epoch,train_loss,test_acc\n");
  char line[128];
  for (const auto& e : m.epochs) {
    if (with_seconds) {
      std::snprintf(line, sizeof line, "%zu,%.8f,%.4f,%.3f\n", e.epoch, e.train_loss, e.test_acc,
                    e.seconds);
    } else {
      std::snprintf(line, sizeof line, "%zu,%.8f,%.4f\n", e.epoch, e.train_loss, e.test_acc);
    }
    os << line;
  }
  return os.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Hyperparameter sweep.

struct SweepCell {
  NetworkMode mode = NetworkMode::TernaryMean;
  double learning_rate = 1e-3;
  double weight_decay = 0;
};

struct SweepGrid {
  std::vector<NetworkMode> modes;
  std::vector<double> learning_rates;
  std::vector<double> weight_decays;

  std::vector<SweepCell> cells() const {
    std::vector<SweepCell> out;
    for (NetworkMode m : modes)
      for (double lr : learning_rates)
        for (double wd : weight_decays) out.push_back({m, lr, wd});
    return out;
  }
};

struct SweepResult {
  SweepCell cell;
  bool diverged = false;
  std::string detail;
  RunMetrics metrics;
};

using SweepCallback = std::function<void(std::size_t index, const SweepResult&)>;

/// One train + evaluate per cell. Every cell uses the base seed, so cells
/// differ only in their hyperparameters; a diverging cell is recorded as DNF.
inline std::vector<SweepResult> sweep(const ModelSpec& base_spec, const TrainConfig& base_cfg,
                                      const SweepGrid& grid, const Dataset& train_data,
                                      const Dataset& test_data, unsigned jobs = 1,
                                      const SweepCallback& on_cell = {}) {
  const std::vector<SweepCell> cells = grid.cells();
  if (cells.empty()) throw std::invalid_argument("sweep: empty grid");
  for (const SweepCell& c : cells) {
    TrainConfig cfg = base_cfg;
    cfg.learning_rate = c.learning_rate;
    cfg.weight_decay = c.weight_decay;
    cfg.validate();
  }
  std::vector<SweepResult> results(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex report;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      ModelSpec spec = base_spec;
      spec.mode = cells[i].mode;
      TrainConfig cfg = base_cfg;
      cfg.learning_rate = cells[i].learning_rate;
      cfg.weight_decay = cells[i].weight_decay;
      SweepResult r;
      r.cell = cells[i];
      try {
        r.metrics = train(spec, cfg, train_data, test_data).metrics;
      } catch (const DivergenceError& e) {
        r.diverged = true;
        r.detail = e.what();
      }
      results[i] = r;
      if (on_cell) {
        std::lock_guard lock(report);
        on_cell(i, results[i]);
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(cells.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  return results;
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::string sweep_csv(const std::vector<SweepResult>& results) {
  std::ostringstream os;
  os << "mode,lr,wd,final_acc,status\n";
  char acc[32];
  for (const auto& r : results) {
    os << to_string(r.cell.mode) << ',' << format_number(r.cell.learning_rate) << ','
       << format_number(r.cell.weight_decay) << ',';
    if (r.diverged) {
      os << ",DNF\n";
    } else {
      std::snprintf(acc, sizeof acc, "%.2f", r.metrics.final_accuracy);
      os << acc << ",ok\n";
    }
  }
  return os.str();
}

/// Human-readable table in the layout of a bits / learning rate / weight
/// decay / test accuracy results block.
inline std::string sweep_table(const std::vector<SweepResult>& results) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-8s %-14s %-13s %-14s %s\n", "Bits", "Learning Rate",
                "Weight Decay", "Test Accuracy", "Epochs");
  os << line;
  for (const auto& r : results) {
    const std::string bits = r.cell.mode == NetworkMode::FullPrecision16
                                 ? "16"
                                 : "1.58-" + std::string(to_string(r.cell.mode));
    char acc[32];
    if (r.diverged) {
      std::snprintf(acc, sizeof acc, "DNF");
    } else {
      std::snprintf(acc, sizeof acc, "%.2f", r.metrics.final_accuracy);
    }
    std::snprintf(line, sizeof line, "%-8s %-14s %-13.2f %-14s %zu\n", bits.c_str(),
                  format_number(r.cell.learning_rate).c_str(), r.cell.weight_decay, acc,
                  r.metrics.epochs.size());
    os << line;
  }
  return os.str();
}

}  // namespace bitlinear
