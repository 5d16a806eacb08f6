// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#include "petal/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace petal {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw std::invalid_argument("unknown config key '" + where + "." + key + "'");
  }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json augment_to_json(const AugmentConfig& a) {
  return json{{"brightness", a.brightness}, {"contrast", a.contrast},   {"max_shift", a.max_shift},
              {"max_rotation_deg", a.max_rotation_deg}, {"blur_prob", a.blur_prob}, {"flip_prob", a.flip_prob},
              {"noise_std", a.noise_std}};
}

json petal_to_json(const PetalConfig& p) {
  return json{{"method", std::string(to_string(p.method))},
              {"k_aug", p.k_aug},
              {"tau", p.tau},
              {"alpha", p.alpha},
              {"pi", p.pi},
              {"eta", p.eta},
              {"restore", std::string(to_string(p.restore))},
              {"rho", p.rho},
              {"delta", p.delta},
              {"optimizer", std::string(to_string(p.optimizer))},
              {"predict_from", std::string(to_string(p.predict_from))},
              {"reset_optimizer_state", p.reset_optimizer_state},
              {"tent_online", p.tent_online},
              {"augment", augment_to_json(p.augment)}};
}

void petal_from_json(const json& j, PetalConfig& p) {
  check_keys(j,
             {"method", "k_aug", "tau", "alpha", "pi", "eta", "restore", "rho", "delta", "optimizer", "predict_from",
              "reset_optimizer_state", "tent_online", "augment"},
             "petal");
  if (j.contains("method")) p.method = method_from_string(j.at("method").get<std::string>());
  read_if(j, "k_aug", p.k_aug);
  read_if(j, "tau", p.tau);
  read_if(j, "alpha", p.alpha);
  read_if(j, "pi", p.pi);
  read_if(j, "eta", p.eta);
  if (j.contains("restore")) p.restore = restore_from_string(j.at("restore").get<std::string>());
  read_if(j, "rho", p.rho);
  read_if(j, "delta", p.delta);
  if (j.contains("optimizer")) p.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  if (j.contains("predict_from")) p.predict_from = predict_from_string(j.at("predict_from").get<std::string>());
  read_if(j, "reset_optimizer_state", p.reset_optimizer_state);
  read_if(j, "tent_online", p.tent_online);
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    check_keys(a, {"brightness", "contrast", "max_shift", "max_rotation_deg", "blur_prob", "flip_prob", "noise_std"},
               "petal.augment");
    read_if(a, "brightness", p.augment.brightness);
    read_if(a, "contrast", p.augment.contrast);
    read_if(a, "max_shift", p.augment.max_shift);
    read_if(a, "max_rotation_deg", p.augment.max_rotation_deg);
    read_if(a, "blur_prob", p.augment.blur_prob);
    read_if(a, "flip_prob", p.augment.flip_prob);
    read_if(a, "noise_std", p.augment.noise_std);
  }
}

json run_config_echo(const ExperimentConfig& cfg) { return config_to_json(cfg); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (data.train_per_class == 0 || data.test_per_class == 0) throw std::invalid_argument("dataset sizes must be positive");
  if (model_sizes.size() < 3 || model_sizes.front() != kImagePixels || model_sizes.back() != kGlyphClasses) {
    throw std::invalid_argument("model sizes must start at 64 inputs, have a hidden layer and end at 8 classes");
  }
  for (auto s : model_sizes) {
    if (s == 0) throw std::invalid_argument("model sizes must be positive");
  }
  if (training.batch_size < 2) throw std::invalid_argument("training batch size must be at least 2");
  if (!(training.lr > 0.0)) throw std::invalid_argument("training lr must be positive");
  if (!(training.momentum >= 0.0 && training.momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  petal.validate();
  if (schedule.kinds.empty()) throw std::invalid_argument("schedule needs at least one corruption kind");
  if (schedule.batches_per_segment == 0) throw std::invalid_argument("batches_per_segment must be positive");
  if (schedule.batch_size < 2) throw std::invalid_argument("schedule batch size must be at least 2");
  if (schedule.batch_size > data.test_per_class * kGlyphClasses) {
    throw std::invalid_argument("schedule batch size exceeds the test set");
  }
  if (seeds.empty()) throw std::invalid_argument("at least one seed is required");
  if (methods.empty()) throw std::invalid_argument("at least one method is required");
  for (const auto& m : methods) resolve_method(m, petal);
}

json config_to_json(const ExperimentConfig& cfg) {
  json schedule;
  to_json(schedule, cfg.schedule);
  return json{{"data",
               {{"train_seed", cfg.data.train_seed},
                {"test_seed", cfg.data.test_seed},
                {"train_per_class", cfg.data.train_per_class},
                {"test_per_class", cfg.data.test_per_class}}},
              {"model", {{"sizes", cfg.model_sizes}}},
              {"training",
               {{"init_seed", cfg.training.init_seed},
                {"epochs", cfg.training.epochs},
                {"lr", cfg.training.lr},
                {"momentum", cfg.training.momentum},
                {"batch_size", cfg.training.batch_size},
                {"swag_epochs", cfg.training.swag_epochs}}},
              {"petal", petal_to_json(cfg.petal)},
              {"schedule", schedule},
              {"seeds", cfg.seeds},
              {"methods", cfg.methods},
              {"checkpoint_dir", cfg.checkpoint_dir.string()},
              {"out_dir", cfg.out_dir.string()}};
}

ExperimentConfig config_from_json(const json& j, ExperimentConfig cfg) {
  check_keys(j, {"data", "model", "training", "petal", "schedule", "seeds", "methods", "checkpoint_dir", "out_dir"},
             "config");
  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, {"train_seed", "test_seed", "train_per_class", "test_per_class"}, "data");
    read_if(d, "train_seed", cfg.data.train_seed);
    read_if(d, "test_seed", cfg.data.test_seed);
    read_if(d, "train_per_class", cfg.data.train_per_class);
    read_if(d, "test_per_class", cfg.data.test_per_class);
  }
  if (j.contains("model")) {
    check_keys(j.at("model"), {"sizes"}, "model");
    read_if(j.at("model"), "sizes", cfg.model_sizes);
  }
  if (j.contains("training")) {
    const json& t = j.at("training");
    check_keys(t, {"init_seed", "epochs", "lr", "momentum", "batch_size", "swag_epochs"}, "training");
    read_if(t, "init_seed", cfg.training.init_seed);
    read_if(t, "epochs", cfg.training.epochs);
    read_if(t, "lr", cfg.training.lr);
    read_if(t, "momentum", cfg.training.momentum);
    read_if(t, "batch_size", cfg.training.batch_size);
    read_if(t, "swag_epochs", cfg.training.swag_epochs);
  }
  if (j.contains("petal")) petal_from_json(j.at("petal"), cfg.petal);
  if (j.contains("schedule")) from_json(j.at("schedule"), cfg.schedule);
  read_if(j, "seeds", cfg.seeds);
  read_if(j, "methods", cfg.methods);
  if (j.contains("checkpoint_dir")) cfg.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  ExperimentConfig cfg = config_from_json(read_json(path));
  return cfg;
}

PetalConfig resolve_method(const std::string& name, const PetalConfig& base) {
  PetalConfig p = base;
  if (name == "petal_fim") {
    p.method = Method::kPetal;
    p.restore = RestoreKind::kFim;
  } else if (name == "petal_sres") {
    p.method = Method::kPetal;
    p.restore = RestoreKind::kStochastic;
  } else if (name == "petal_none") {
    p.method = Method::kPetal;
    p.restore = RestoreKind::kNone;
  } else if (name == "tent_online") {
    p.method = Method::kTent;
    p.tent_online = true;
  } else if (name == "cotta") {
    p.method = Method::kCotta;
    p.restore = RestoreKind::kStochastic;
  } else {
    p.method = method_from_string(name);
  }
  return p;
}

void recalibrate_batch_norm(MlpClassifier& model, const SyntheticDataset& dataset, std::size_t batch_size) {
  std::size_t k = 0;
  for (std::size_t start = 0; start + batch_size <= dataset.size(); start += batch_size, ++k) {
    Tensor x(Shape{batch_size, kImagePixels});
    auto src = dataset.images.data().subspan(start * kImagePixels, batch_size * kImagePixels);
    std::copy(src.begin(), src.end(), x.data().begin());
    // Momentum 1/(k+1) gives the running average of all batch statistics.
    forward(model, x, BnMode::kTrain, 1.0 / static_cast<double>(k + 1));
  }
}

SourceArtifacts train_source(const ExperimentConfig& cfg) {
  cfg.validate();
  const SyntheticDataset train = make_source_dataset(cfg.data.train_seed, cfg.data.train_per_class);
  const SyntheticDataset test = make_source_dataset(cfg.data.test_seed, cfg.data.test_per_class);
  const auto& tc = cfg.training;

  MlpClassifier model = MlpClassifier::init(tc.init_seed, cfg.model_sizes);
  FlatParams velocity = flatten(model).zeros_like();
  SwagDiagBuilder builder;
  std::mt19937_64 rng(tc.init_seed + 1);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t first_collect = tc.epochs > tc.swag_epochs ? tc.epochs - tc.swag_epochs : 0;
  double last_loss = 0.0;

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + tc.batch_size <= order.size(); start += tc.batch_size) {
      Tensor x(Shape{tc.batch_size, kImagePixels});
      Tensor target(Shape{tc.batch_size, kGlyphClasses}, 0.0);
      for (std::size_t i = 0; i < tc.batch_size; ++i) {
        const std::size_t src = order[start + i];
        auto from = train.images.data().subspan(src * kImagePixels, kImagePixels);
        std::copy(from.begin(), from.end(), x.data().begin() + static_cast<std::ptrdiff_t>(i * kImagePixels));
        target.at(i, static_cast<std::size_t>(train.labels[src])) = 1.0;
      }
      Graph g;
      const TapedForward fwd = forward_taped(model, g, x, BnMode::kTrain);
      const Var loss = soft_cross_entropy(g, target, fwd.logits);
      const double value = g.value(loss).item();
      if (!std::isfinite(value)) throw NumericalError("source training diverged");
      const FlatParams grad = gather_gradients(model, fwd, g.backward(loss));
      FlatParams theta = flatten(model);
      for (std::size_t i = 0; i < theta.size(); ++i) {
        velocity[i] = tc.momentum * velocity[i] + grad[i];
        theta[i] -= tc.lr * velocity[i];
      }
      load(model, theta);
      epoch_loss += value;
      ++batches;
    }
    last_loss = batches ? epoch_loss / static_cast<double>(batches) : 0.0;
    if (epoch >= first_collect) builder.collect(flatten(model));
  }

  SourceArtifacts out{std::move(model), builder.finalize(), 0.0, last_loss};
  load(out.model, out.posterior.map_params());
  recalibrate_batch_norm(out.model, train, tc.batch_size);
  out.clean_test_error = clean_error(out.model, test, tc.batch_size, BnMode::kEval);
  return out;
}

SourceArtifacts cmd_train_source(const ExperimentConfig& cfg, std::ostream& log) {
  SourceArtifacts art = train_source(cfg);
  fs::create_directories(cfg.checkpoint_dir);
  save_model(cfg.checkpoint_dir / kModelFile, art.model);
  save_posterior(cfg.checkpoint_dir / kPosteriorFile, art.posterior);
  json summary{{"clean_test_error", art.clean_test_error},
               {"final_train_loss", art.final_train_loss},
               {"iterates", art.posterior.iterates()},
               {"trainables", art.posterior.dim()},
               {"config", run_config_echo(cfg)}};
  write_text(cfg.checkpoint_dir / "train_summary.json", summary.dump(2) + "\n");
  log << "source model: clean test error " << std::fixed << std::setprecision(2) << art.clean_test_error
      << "%, " << art.posterior.iterates() << " SWAG iterates, D = " << art.posterior.dim() << "\n";
  return art;
}

json run_report_json(const RunReport& report, const ExperimentConfig& cfg, const std::string& method,
                     std::uint64_t seed) {
  json segments = json::array();
  for (std::size_t s = 0; s < report.segments.size(); ++s) {
    const auto& seg = report.segments[s];
    segments.push_back(json{{"index", s},
                            {"kind", std::string(to_string(seg.spec.kind))},
                            {"severity", seg.spec.severity},
                            {"error", seg.totals.error()},
                            {"nll", seg.totals.nll()},
                            {"brier", seg.totals.brier()},
                            {"restored_mean", seg.restored_mean}});
  }
  json overall = json::object();
  if (report.overall.count > 0) {
    overall = json{{"error", report.overall.error()},
                   {"nll", report.overall.nll()},
                   {"brier", report.overall.brier()},
                   {"restored_mean", report.restored_mean}};
  }
  json schedule;
  to_json(schedule, cfg.schedule);
  return json{{"method", method}, {"seed", seed},       {"schedule", schedule},
              {"segments", segments}, {"overall", overall}, {"config", run_config_echo(cfg)}};
}

std::string run_report_csv(const RunReport& report) {
  std::string out = "step,segment,error,nll,brier,loss,restored\n";
  for (const auto& r : report.steps) {
    out += std::to_string(r.step) + "," + std::to_string(r.segment) + "," + fmt_g17(r.error) + "," +
           fmt_g17(r.nll) + "," + fmt_g17(r.brier) + "," + fmt_g17(r.loss) + "," + std::to_string(r.restored) +
           "\n";
  }
  return out;
}

json cmd_adapt(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const fs::path model_path = cfg.checkpoint_dir / kModelFile;
  const fs::path posterior_path = cfg.checkpoint_dir / kPosteriorFile;
  if (!fs::exists(model_path) || !fs::exists(posterior_path)) {
    throw std::runtime_error("missing checkpoint in " + cfg.checkpoint_dir.string() + " (run train-source first)");
  }
  const MlpClassifier source_model = load_model(model_path);
  const SwagDiagPosterior posterior = load_posterior(posterior_path);
  if (source_model.sizes() != cfg.model_sizes) throw std::runtime_error("checkpoint architecture differs from config");
  flatten(source_model).require_same_layout(posterior.mu(), "checkpoint/posterior registry");

  const SyntheticDataset test = make_source_dataset(cfg.data.test_seed, cfg.data.test_per_class);
  const StreamSchedule schedule = build_schedule(cfg.schedule);
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir / "config.json", config_to_json(cfg).dump(2) + "\n");

  json summary{{"methods", json::array()}};
  for (const auto& name : cfg.methods) {
    const PetalConfig pc = resolve_method(name, cfg.petal);
    const fs::path dir = cfg.out_dir / name;
    fs::create_directories(dir);
    json method_entry{{"method", name}, {"runs", json::array()}};
    for (auto seed : cfg.seeds) {
      const RunReport report = run_lifelong(schedule, test, posterior, source_model, pc, seed);
      const std::string stem = "seed" + std::to_string(seed);
      write_text(dir / (stem + ".json"), run_report_json(report, cfg, name, seed).dump(2) + "\n");
      write_text(dir / (stem + ".csv"), run_report_csv(report));
      method_entry["runs"].push_back(json{{"seed", seed},
                                          {"error", report.overall.error()},
                                          {"nll", report.overall.nll()},
                                          {"brier", report.overall.brier()}});
      log << name << " seed " << seed << ": error " << std::fixed << std::setprecision(2) << report.overall.error()
          << "%  nll " << std::setprecision(4) << report.overall.nll() << "  brier " << report.overall.brier()
          << "\n";
    }
    summary["methods"].push_back(method_entry);
  }
  write_text(cfg.out_dir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

ReportTable cmd_report(const std::vector<fs::path>& run_dirs) {
  if (run_dirs.empty()) throw std::invalid_argument("report needs at least one run directory");

  struct Runs {
    std::vector<json> reports;
  };
  std::map<std::string, Runs> by_method;
  std::optional<json> schedule;
  std::optional<json> segment_layout;
  for (const auto& dir : run_dirs) {
    if (!fs::is_directory(dir)) throw std::runtime_error("not a run directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& sub : fs::directory_iterator(dir)) {
      if (!sub.is_directory()) continue;
      for (const auto& f : fs::directory_iterator(sub.path())) {
        if (f.path().extension() == ".json" && f.path().filename().string().rfind("seed", 0) == 0) {
          files.push_back(f.path());
        }
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      json r = read_json(f);
      json layout = json::array();
      for (const auto& s : r.at("segments")) layout.push_back(json{{"kind", s.at("kind")}, {"severity", s.at("severity")}});
      if (!schedule) {
        schedule = r.at("schedule");
        segment_layout = layout;
      } else if (*schedule != r.at("schedule") || *segment_layout != layout) {
        throw std::runtime_error("inconsistent schedules across runs (" + f.string() + ")");
      }
      by_method[r.at("method").get<std::string>()].reports.push_back(std::move(r));
    }
  }
  if (by_method.empty()) throw std::runtime_error("no run reports found");

  std::vector<std::string> columns;
  for (const auto& s : *segment_layout) {
    columns.push_back(s.at("kind").get<std::string>() + "@" + std::to_string(s.at("severity").get<int>()));
  }
  columns.push_back("mean");

  auto stats = [](const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return std::pair{mean, sd};
  };

  std::ostringstream text, csv;
  csv << "metric,method,column,mean,std,runs,best\n";
  for (const char* metric : {"error", "nll", "brier"}) {
    // cells[method][column] = (mean, std)
    std::map<std::string, std::vector<std::pair<double, double>>> cells;
    for (const auto& [method, runs] : by_method) {
      for (std::size_t c = 0; c < columns.size(); ++c) {
        std::vector<double> values;
        for (const auto& r : runs.reports) {
          values.push_back(c + 1 < columns.size() ? r.at("segments").at(c).at(metric).get<double>()
                                                  : r.at("overall").at(metric).get<double>());
        }
        cells[method].push_back(stats(values));
      }
    }
    std::vector<std::string> best(columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) {
      double lowest = 0.0;
      for (const auto& [method, row] : cells) {
        if (best[c].empty() || row[c].first < lowest) {
          best[c] = method;
          lowest = row[c].first;
        }
      }
    }

    const int precision = std::string(metric) == "error" ? 2 : 4;
    std::size_t name_width = 6;
    for (const auto& [method, row] : cells) name_width = std::max(name_width, method.size());
    std::vector<std::string> rendered_header;
    std::map<std::string, std::vector<std::string>> rendered;
    std::vector<std::size_t> widths(columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) widths[c] = columns[c].size();
    for (const auto& [method, row] : cells) {
      for (std::size_t c = 0; c < columns.size(); ++c) {
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(precision) << row[c].first << " +- " << row[c].second
             << (best[c] == method ? " *" : "  ");
        rendered[method].push_back(cell.str());
        widths[c] = std::max(widths[c], cell.str().size());
        csv << metric << ',' << method << ',' << columns[c] << ',' << fmt_g17(row[c].first) << ','
            << fmt_g17(row[c].second) << ',' << by_method.at(method).reports.size() << ','
            << (best[c] == method ? 1 : 0) << '\n';
      }
    }
    text << metric << " (mean +- std over runs; * marks the lowest mean per column; time runs left to right)\n";
    text << std::left << std::setw(static_cast<int>(name_width)) << "method";
    for (std::size_t c = 0; c < columns.size(); ++c) text << " | " << std::setw(static_cast<int>(widths[c])) << columns[c];
    text << "\n";
    for (const auto& [method, cells_text] : rendered) {
      text << std::left << std::setw(static_cast<int>(name_width)) << method;
      for (std::size_t c = 0; c < columns.size(); ++c) {
        text << " | " << std::setw(static_cast<int>(widths[c])) << cells_text[c];
      }
      text << "\n";
    }
    text << "\n";
  }
  return ReportTable{text.str(), csv.str()};
}

}  // namespace petal
