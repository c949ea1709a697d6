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
// Acceptance run: one PASS/FAIL line per criterion, then a summary.
//
//   acceptance [--mnist DIR] [--only 1,7] [--expect-fail 5,6]
//
// Criteria listed in --expect-fail still print FAIL; they only stop counting
// against the exit status. A listed criterion that passes is reported too.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "bitlinear/bitlinear.hpp"

namespace {

using namespace bitlinear;
namespace fs = std::filesystem;

struct Run {
  NetworkMode mode;
  double lr;
  double wd;
};

bool operator<(const Run& a, const Run& b) {
  return std::tie(a.mode, a.lr, a.wd) < std::tie(b.mode, b.lr, b.wd);
}

std::string describe(const Run& r) {
  return std::string(to_string(r.mode)) + " lr " + format_number(r.lr) + " wd " + format_number(r.wd);
}

class Mnist {
 public:
  explicit Mnist(fs::path dir) : dir_(std::move(dir)) {}

  const Dataset& train_set() {
    if (train_.size() == 0)
      train_ = load_idx(dir_ / "train-images-idx3-ubyte.gz", dir_ / "train-labels-idx1-ubyte.gz",
                        Split::Train);
    return train_;
  }
  const Dataset& test_set() {
    if (test_.size() == 0)
      test_ = load_idx(dir_ / "t10k-images-idx3-ubyte.gz", dir_ / "t10k-labels-idx1-ubyte.gz",
                       Split::Test);
    return test_;
  }

  // Ten epochs, batch 128, seed 0; each configuration trains once.
  const TrainResult& run(const Run& r) {
    auto it = cache_.find(r);
    if (it != cache_.end()) return it->second;
    std::fprintf(stderr, "training %s ...\n", describe(r).c_str());
    ModelSpec spec;
    spec.mode = r.mode;
    TrainConfig cfg;
    cfg.learning_rate = r.lr;
    cfg.weight_decay = r.wd;
    TrainResult res = train(spec, cfg, train_set(), test_set());
    std::fprintf(stderr, "  %.2f%% in %.0fs\n", res.metrics.final_accuracy, res.metrics.seconds);
    return cache_.emplace(r, std::move(res)).first->second;
  }

  // Accuracy, or a negative value when training diverged.
  double accuracy(const Run& r) {
    try {
      return run(r).metrics.final_accuracy;
    } catch (const DivergenceError& e) {
      std::fprintf(stderr, "  %s diverged: %s\n", describe(r).c_str(), e.what());
      return -1.0;
    }
  }

 private:
  fs::path dir_;
  Dataset train_, test_;
  std::map<Run, TrainResult> cache_;
};

const Run kMean{NetworkMode::TernaryMean, 1e-3, 0.0};
const Run kFull{NetworkMode::FullPrecision16, 1e-3, 0.0};
const Run kMedian{NetworkMode::TernaryMedian, 1e-3, 0.0};

std::string pct(double v) {
  if (v < 0) return "DNF";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", v);
  return buf;
}

CheckResult threshold(const char* name, double acc, double floor) {
  return {name, acc >= floor, pct(acc) + " (need >= " + pct(floor) + ")"};
}

CheckResult weight_decay_pattern(Mnist& m) {
  double acc[3];
  const double wds[3] = {0.0, 0.01, 0.05};
  for (int i = 0; i < 3; ++i) acc[i] = m.accuracy({NetworkMode::TernaryMean, 1e-3, wds[i]});
  const bool ordered = acc[1] <= acc[0] + 1.0 && acc[2] <= acc[1] + 1.0 && acc[2] >= 0;
  const bool banded = acc[2] >= 86.57 - 4.0 && acc[2] <= 86.57 + 4.0;
  std::ostringstream os;
  os << "wd 0/0.01/0.05: " << pct(acc[0]) << " / " << pct(acc[1]) << " / " << pct(acc[2])
     << "; non-increasing within 1 point: " << (ordered ? "yes" : "no")
     << "; wd 0.05 in [82.57, 90.57]: " << (banded ? "yes" : "no");
  return {"weight decay degradation", ordered && banded, os.str()};
}

CheckResult export_parity(Mnist& m) {
  const TrainResult& r = m.run(kMean);
  const Dataset& test = m.test_set();
  // Round-trip through the on-disk byte format before predicting.
  const auto net = parse_ternary(ternary_bytes(export_network(r.model)));
  const auto exported = predict_all(net, test);

  // Training-time forward: the autodiff graph the optimizer sees.
  Classifier<float> model = r.model;
  std::vector<std::int32_t> trained;
  BatchIterator it(test, 1000, 0, false);
  Batch batch;
  while (it.next(batch)) {
    Tape<float> tape;
    const Var logits = model.forward(tape, tape.constant(batch.images));
    const auto p = predict(tape.value(logits));
    trained.insert(trained.end(), p.begin(), p.end());
  }
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < test.size(); ++i) mismatches += trained[i] != exported[i];
  return {"export parity", mismatches == 0 && trained.size() == test.size(),
          std::to_string(test.size()) + " test images, " + std::to_string(mismatches) +
              " label mismatches"};
}

CheckResult determinism(Mnist& m) {
  const std::string first = metrics_csv(m.run(kMean).metrics, false);
  std::fprintf(stderr, "training %s again ...\n", describe(kMean).c_str());
  ModelSpec spec;
  spec.mode = kMean.mode;
  TrainConfig cfg;
  cfg.learning_rate = kMean.lr;
  const std::string second = metrics_csv(train(spec, cfg, m.train_set(), m.test_set()).metrics, false);
  return {"determinism", first == second,
          first == second ? "metrics CSVs identical (" + std::to_string(first.size()) + " bytes)"
                          : "metrics CSVs differ"};
}

std::set<int> parse_set(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string mnist_dir = BITLINEAR_MNIST_DIR, only, expect_fail;
  app.add_option("--mnist", mnist_dir, "directory with the MNIST IDX files");
  app.add_option("--only", only, "comma-separated criteria to run");
  app.add_option("--expect-fail", expect_fail, "comma-separated criteria known to fail");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected = parse_set(only), known = parse_set(expect_fail);

  Mnist m(mnist_dir);
  using Criterion = std::function<CheckResult()>;
  const std::vector<Criterion> criteria = {
      [&] { return threshold("1.58-mean accuracy", m.accuracy(kMean), 94.5); },
      [&] { return threshold("16-bit accuracy", m.accuracy(kFull), 95.5); },
      [&] { return threshold("1.58-median accuracy", m.accuracy(kMedian), 94.0); },
      [&] {
        const double full = m.accuracy(kFull), mean = m.accuracy(kMean);
        const double gap = full - mean;
        char buf[96];
        std::snprintf(buf, sizeof buf, "16-bit %.2f%% - 1.58-mean %.2f%% = %.2f points (need <= 3)",
                      full, mean, gap);
        return CheckResult{"quantization gap", full >= 0 && mean >= 0 && gap <= 3.0, buf};
      },
      [&] { return weight_decay_pattern(m); },
      [&] {
        const double acc = m.accuracy({NetworkMode::TernaryMedian, 0.1, 0.0});
        return CheckResult{"high learning rate distortion", acc < 75.0,
                           "1.58-median lr 0.1: " + pct(acc) + " (need < 75%)"};
      },
      [] { return check_kernel_exactness(10000); },
      [] { return check_ste_closed_form(100); },
      [] { return check_finite_differences(); },
      [] {
        CheckResult f = check_scale_invariance<float>(1000);
        const CheckResult d = check_scale_invariance<double>(1000);
        return CheckResult{f.name, f.passed && d.passed,
                           "float: " + f.detail + "; double: " + d.detail};
      },
      [&] { return export_parity(m); },
      [&] { return determinism(m); },
  };

  int unexpected = 0, passed = 0, failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    CheckResult r;
    try {
      r = criteria[i]();
    } catch (const std::exception& e) {
      r = {"criterion " + std::to_string(id), false, std::string("error: ") + e.what()};
    }
    const bool expected_fail = known.count(id) > 0;
    std::printf("%s %2d %s: %s%s\n", r.passed ? "PASS" : "FAIL", id, r.name.c_str(),
                r.detail.c_str(),
                expected_fail ? (r.passed ? " [listed as known failure]" : " [known failure]") : "");
    std::fflush(stdout);
    (r.passed ? passed : failed)++;
    if (!r.passed && !expected_fail) ++unexpected;
  }
  std::printf("%d passed, %d failed, %d unexpected\n", passed, failed, unexpected);
  return unexpected == 0 ? 0 : 1;
}
