// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

// petal: train-source | adapt | report

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "petal/experiment.hpp"

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw std::invalid_argument("empty entry in --seeds");
    std::size_t used = 0;
    const auto v = std::stoull(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad seed '" + item + "'");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw std::invalid_argument("--seeds needs at least one value");
  return seeds;
}

struct Overrides {
  std::string config_path;
  std::vector<std::string> methods;
  std::string seeds;
  std::string schedule;
  std::string restore;
  std::optional<double> delta, rho, alpha, tau;
  std::optional<std::size_t> k_aug;
  std::string out;
  std::string checkpoints;
  std::string predict_from;
  bool reset_optimizer_state = false;
  bool dump_config = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "JSON config file");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--checkpoints", o.checkpoints, "checkpoint directory (defaults to --out)");
  cmd->add_flag("--dump-config", o.dump_config, "print the resolved config and exit");
}

void add_adapt_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--method", o.methods, "method name (repeatable)");
  cmd->add_option("--seeds", o.seeds, "comma-separated seed list");
  cmd->add_option("--schedule", o.schedule, "continual5 or gradual")->check(CLI::IsMember({"continual5", "gradual"}));
  cmd->add_option("--restore", o.restore, "none, stochastic or fim")->check(CLI::IsMember({"none", "stochastic", "fim"}));
  cmd->add_option("--delta", o.delta, "FIM restore fraction");
  cmd->add_option("--rho", o.rho, "stochastic restore probability");
  cmd->add_option("--alpha", o.alpha, "log-posterior weight");
  cmd->add_option("--tau", o.tau, "augmentation confidence threshold");
  cmd->add_option("--k-aug", o.k_aug, "augmentations per low-confidence sample");
  cmd->add_option("--predict-from", o.predict_from, "teacher or student")
      ->check(CLI::IsMember({"teacher", "student"}));
  cmd->add_flag("--reset-optimizer-state", o.reset_optimizer_state, "zero Adam moments of restored entries");
}

petal::ExperimentConfig resolve(const Overrides& o) {
  petal::ExperimentConfig cfg = o.config_path.empty() ? petal::ExperimentConfig{} : petal::load_config(o.config_path);
  if (!o.out.empty()) {
    cfg.out_dir = o.out;
    if (o.checkpoints.empty()) cfg.checkpoint_dir = o.out;
  }
  if (!o.checkpoints.empty()) cfg.checkpoint_dir = o.checkpoints;
  if (!o.methods.empty()) cfg.methods = o.methods;
  if (!o.seeds.empty()) cfg.seeds = parse_seeds(o.seeds);
  if (!o.schedule.empty()) cfg.schedule.mode = petal::schedule_mode_from_string(o.schedule);
  if (!o.restore.empty()) cfg.petal.restore = petal::restore_from_string(o.restore);
  if (o.delta) cfg.petal.delta = *o.delta;
  if (o.rho) cfg.petal.rho = *o.rho;
  if (o.alpha) cfg.petal.alpha = *o.alpha;
  if (o.tau) cfg.petal.tau = *o.tau;
  if (o.k_aug) cfg.petal.k_aug = *o.k_aug;
  if (!o.predict_from.empty()) cfg.petal.predict_from = petal::predict_from_string(o.predict_from);
  if (o.reset_optimizer_state) cfg.petal.reset_optimizer_state = true;
  if (const char* env = std::getenv("PETAL_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n < 1) throw std::invalid_argument("PETAL_THREADS must be a positive integer");
    cfg.petal.threads = static_cast<std::size_t>(n);
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lifelong test-time adaptation on a synthetic corruption benchmark"};
  app.require_subcommand(1);

  Overrides train_o, adapt_o;
  auto* train = app.add_subcommand("train-source", "train the source model and its SWAG-diagonal posterior");
  add_common(train, train_o);
  auto* adapt = app.add_subcommand("adapt", "run lifelong adaptation for each method and seed");
  add_common(adapt, adapt_o);
  add_adapt_flags(adapt, adapt_o);

  std::vector<std::string> run_dirs;
  std::string report_csv;
  auto* report = app.add_subcommand("report", "compare methods across run directories");
  report->add_option("run_dirs", run_dirs, "directories written by adapt")->required();
  report->add_option("--csv", report_csv, "also write the table as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto cfg = resolve(train_o);
      if (train_o.dump_config) {
        std::cout << petal::config_to_json(cfg).dump(2) << "\n";
        return 0;
      }
      petal::cmd_train_source(cfg, std::cout);
    } else if (*adapt) {
      const auto cfg = resolve(adapt_o);
      if (adapt_o.dump_config) {
        std::cout << petal::config_to_json(cfg).dump(2) << "\n";
        return 0;
      }
      petal::cmd_adapt(cfg, std::cout);
    } else if (*report) {
      std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
      const auto table = petal::cmd_report(dirs);
      std::cout << table.text;
      if (!report_csv.empty()) {
        std::ofstream out(report_csv, std::ios::binary | std::ios::trunc);
        if (!(out << table.csv)) throw std::runtime_error("cannot write " + report_csv);
      }
    }
  } catch (const petal::NumericalError& e) {
    std::cerr << "petal: numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "petal: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
