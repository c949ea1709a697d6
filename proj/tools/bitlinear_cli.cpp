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

// bitlinear: fetch, train, sweep, eval, export, bench and selftest.
//
// Exit codes: 0 success, 1 usage or config error, 2 runtime error,
// 3 divergence (a sweep with at least one DNF cell also exits 3).

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bitlinear/bitlinear.hpp"
#include "fetch.hpp"

namespace fs = std::filesystem;
using namespace bitlinear;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitDiverged = 3;

// Flags shared by train / sweep / eval; each overrides the config file.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<double> lr;
  std::optional<double> wd;
  std::optional<std::size_t> epochs;
  std::string out;
};

void add_overrides(CLI::App* cmd, Overrides& o, bool with_out = true) {
  cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--mode", o.mode, "16|mean|median");
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--wd", o.wd, "weight decay");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  if (with_out) cmd->add_option("--out", o.out, "output directory");
}

RunConfig resolve_config(const Overrides& o) {
  RunConfig cfg = o.config.empty() ? parse_run_config("{}", fs::current_path())
                                   : load_run_config(o.config);
  try {
    if (o.seed) cfg.train.seed = *o.seed;
    if (o.mode) cfg.model.mode = parse_network_mode(*o.mode);
    if (o.lr) cfg.train.learning_rate = *o.lr;
    if (o.wd) cfg.train.weight_decay = *o.wd;
    if (o.epochs) cfg.train.epochs = *o.epochs;
    cfg.model.validate();
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

void say(const std::string& msg) { std::cerr << msg << '\n'; }

Dataset load_split(const DataPaths& p, Split split) {
  return split == Split::Train ? load_idx(p.train_images, p.train_labels, Split::Train)
                               : load_idx(p.test_images, p.test_labels, Split::Test);
}

void print_epoch(const EpochMetrics& m) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "epoch %zu  loss %.4f  test acc %.2f%%  (%.1fs)", m.epoch,
                m.train_loss, m.test_acc, m.seconds);
  say(buf);
}

int cmd_train(const Overrides& o) {
  RunConfig cfg = resolve_config(o);
  if (!o.out.empty()) {
    cfg.output.metrics_csv = fs::path(o.out) / "metrics.csv";
    cfg.output.checkpoint = fs::path(o.out) / "model.bl58";
  }
  const Dataset train_set = load_split(cfg.data, Split::Train);
  const Dataset test_set = load_split(cfg.data, Split::Test);
  say("training " + std::string(to_string(cfg.model.mode)) + ", " +
      std::to_string(cfg.model.linear_parameter_count() + cfg.model.norm_parameter_count()) +
      " parameters, lr " + format_number(cfg.train.learning_rate) + ", wd " +
      format_number(cfg.train.weight_decay));
  TrainResult r = train(cfg.model, cfg.train, train_set, test_set, print_epoch);
  if (!cfg.output.metrics_csv.empty()) {
    write_text_file(cfg.output.metrics_csv, metrics_csv(r.metrics));
    say("metrics: " + cfg.output.metrics_csv.string());
  }
  if (!cfg.output.checkpoint.empty()) {
    save_checkpoint(r.model, cfg.output.checkpoint);
    say("checkpoint: " + cfg.output.checkpoint.string());
  }
  std::printf("final_acc %.2f\n", r.metrics.final_accuracy);
  return kExitOk;
}

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + ": bad number '" + item + "'");
    }
  }
  return out;
}

int cmd_sweep(const Overrides& o, const std::string& modes, const std::string& lrs,
              const std::string& wds, unsigned jobs) {
  RunConfig cfg = resolve_config(o);
  SweepGrid grid;
  std::stringstream ms(modes);
  std::string m;
  while (std::getline(ms, m, ',')) {
    try {
      grid.modes.push_back(parse_network_mode(m));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("--modes: ") + e.what());
    }
  }
  grid.learning_rates = parse_list(lrs, "--lrs");
  grid.weight_decays = parse_list(wds, "--wds");
  if (grid.cells().empty()) throw ConfigError("sweep: empty grid");
  const fs::path out = o.out.empty() ? fs::path("runs/sweep") : fs::path(o.out);
  const Dataset train_set = load_split(cfg.data, Split::Train);
  const Dataset test_set = load_split(cfg.data, Split::Test);
  say("sweep over " + std::to_string(grid.cells().size()) + " cells");
  const auto results =
      sweep(cfg.model, cfg.train, grid, train_set, test_set, jobs,
            [&out](std::size_t, const SweepResult& r) {
              const std::string name = std::string(to_string(r.cell.mode)) + "_lr" +
                                       format_number(r.cell.learning_rate) + "_wd" +
                                       format_number(r.cell.weight_decay);
              if (r.diverged) {
                say(name + ": DNF (" + r.detail + ")");
              } else {
                write_text_file(out / "cells" / (name + ".csv"), metrics_csv(r.metrics));
                char buf[64];
                std::snprintf(buf, sizeof buf, ": %.2f%%", r.metrics.final_accuracy);
                say(name + buf);
              }
            });
  write_text_file(out / "sweep.csv", sweep_csv(results));
  std::cout << sweep_table(results);
  for (const auto& r : results)
    if (r.diverged) return kExitDiverged;
  return kExitOk;
}

int cmd_eval(const Overrides& o, const std::string& model_path) {
  RunConfig cfg = resolve_config(o);
  const Dataset test_set = load_split(cfg.data, Split::Test);
  const auto bytes = io::read_file(model_path);
  double acc = 0;
  switch (sniff_model_file(bytes)) {
    case ModelFileKind::Ternary:
      acc = evaluate(parse_ternary(bytes), test_set);
      break;
    case ModelFileKind::Checkpoint:
      acc = evaluate(parse_checkpoint(bytes), test_set);
      break;
    case ModelFileKind::Unknown:
      throw MagicError(model_path + ": not a checkpoint or ternary export");
  }
  std::printf("accuracy %.2f\n", acc);
  return kExitOk;
}

int cmd_export(const std::string& model_path, const std::string& out) {
  const Classifier<float> model = load_checkpoint(model_path);
  export_ternary(model, out);
  say("wrote " + out + " (" + std::to_string(fs::file_size(out)) + " bytes)");
  return kExitOk;
}

int cmd_bench(const std::vector<std::string>& shapes, std::size_t reps, const std::string& out,
              unsigned threads, std::uint64_t seed) {
  std::vector<BenchShape> parsed;
  for (const auto& s : shapes) {
    try {
      parsed.push_back(parse_bench_shape(s));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (reps == 0) throw ConfigError("bench: --reps must be positive");
  const std::string csv = bench_csv(bench(parsed, reps, seed, threads));
  if (out.empty()) {
    std::cout << csv;
  } else {
    write_text_file(out, csv);
    say("wrote " + out);
  }
  return kExitOk;
}

int cmd_selftest() {
  bool ok = true;
  for (const CheckResult& r : run_selftest()) {
    std::printf("%s  %s: %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BitLinear 1.58-bit quantization-aware training toolkit"};
  app.require_subcommand(1);

  std::string fetch_dest = "data/mnist", fetch_manifest = "configs/mnist.json", fetch_url;
  auto* fetch_cmd = app.add_subcommand("fetch", "download and verify the MNIST archives");
  fetch_cmd->add_option("--dest", fetch_dest, "destination directory");
  fetch_cmd->add_option("--manifest", fetch_manifest, "file list with checksums")
      ->check(CLI::ExistingFile);
  fetch_cmd->add_option("--base-url", fetch_url, "override the manifest base URL");

  Overrides train_o;
  auto* train_cmd = app.add_subcommand("train", "train one model");
  add_overrides(train_cmd, train_o);

  Overrides sweep_o;
  std::string modes = "16,mean,median", lrs = "0.001", wds = "0,0.01,0.05";
  unsigned jobs = 1;
  auto* sweep_cmd = app.add_subcommand("sweep", "grid over mode x lr x wd");
  add_overrides(sweep_cmd, sweep_o);
  sweep_cmd->add_option("--modes", modes, "comma-separated modes");
  sweep_cmd->add_option("--lrs", lrs, "comma-separated learning rates");
  sweep_cmd->add_option("--wds", wds, "comma-separated weight decays");
  sweep_cmd->add_option("--jobs", jobs, "cells trained in parallel");

  Overrides eval_o;
  std::string eval_model;
  auto* eval_cmd = app.add_subcommand("eval", "test accuracy of a checkpoint or ternary export");
  add_overrides(eval_cmd, eval_o, false);
  eval_cmd->add_option("model", eval_model, "model file")->required()->check(CLI::ExistingFile);

  std::string export_model, export_out;
  auto* export_cmd = app.add_subcommand("export", "pack a ternary checkpoint for inference");
  export_cmd->add_option("model", export_model, "checkpoint")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--out", export_out, "output file")->required();

  std::vector<std::string> bench_shapes{"1x784x128", "128x784x128", "128x128x64", "128x64x10"};
  std::size_t bench_reps = 20;
  std::string bench_out;
  unsigned bench_threads = 1;
  std::uint64_t bench_seed = 0;
  auto* bench_cmd = app.add_subcommand("bench", "ternary kernel vs float matmul timing");
  bench_cmd->add_option("--shape", bench_shapes, "BxKxN, repeatable");
  bench_cmd->add_option("--reps", bench_reps, "repetitions per shape");
  bench_cmd->add_option("--threads", bench_threads, "kernel threads, 0 = all cores");
  bench_cmd->add_option("--seed", bench_seed, "input seed");
  bench_cmd->add_option("--out", bench_out, "CSV file (default stdout)");

  auto* selftest_cmd = app.add_subcommand("selftest", "numerical self-checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*fetch_cmd) {
      auto manifest = fetch::load_manifest(fetch_manifest);
      if (!fetch_url.empty()) manifest.base_url = fetch_url;
      curl_global_init(CURL_GLOBAL_DEFAULT);
      fetch::fetch_all(manifest, fetch_dest, say);
      curl_global_cleanup();
      return kExitOk;
    }
    if (*train_cmd) return cmd_train(train_o);
    if (*sweep_cmd) return cmd_sweep(sweep_o, modes, lrs, wds, jobs);
    if (*eval_cmd) return cmd_eval(eval_o, eval_model);
    if (*export_cmd) return cmd_export(export_model, export_out);
    if (*bench_cmd) return cmd_bench(bench_shapes, bench_reps, bench_out, bench_threads, bench_seed);
    if (*selftest_cmd) return cmd_selftest();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << " (epoch " << e.epoch() << ", step " << e.step()
              << ")\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
