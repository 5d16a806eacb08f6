// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "petal/engine.hpp"
#include "petal/model.hpp"
#include "petal/stream.hpp"
#include "petal/swag.hpp"

namespace petal {

struct DataConfig {
  std::uint64_t train_seed = 1000;
  std::uint64_t test_seed = 2000;
  std::size_t train_per_class = 250;
  std::size_t test_per_class = 200;
};

struct SourceTrainingConfig {
  std::uint64_t init_seed = 7;
  std::size_t epochs = 30;
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  /// One SWAG iterate at the end of each of the final `swag_epochs` epochs.
  std::size_t swag_epochs = 5;
};

/// Everything one experiment needs. Parsing rejects unknown keys and
/// validates ranges before any work starts.
struct ExperimentConfig {
  DataConfig data;
  std::vector<std::size_t> model_sizes{64, 128, 128, 8};
  SourceTrainingConfig training;
  PetalConfig petal;
  ScheduleSpec schedule{{CorruptionKind::kGaussianNoise, CorruptionKind::kBoxBlur, CorruptionKind::kContrast,
                         CorruptionKind::kPixelate},
                        ScheduleMode::kContinual5,
                        0,
                        25,
                        64};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<std::string> methods{"source", "bn_adapt", "tent", "cotta", "petal_fim"};
  std::filesystem::path checkpoint_dir = "out";
  std::filesystem::path out_dir = "out";

  void validate() const;
};

/// Resolved config as JSON (thread count excluded: it never changes results).
nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// Overlays `j` onto `base`; throws std::invalid_argument on unknown keys.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Method names accepted by `adapt`: the Method names plus petal_fim,
/// petal_sres, petal_none (PETAL with that restore policy) and tent_online.
PetalConfig resolve_method(const std::string& name, const PetalConfig& base);

struct SourceArtifacts {
  MlpClassifier model;  // posterior mean loaded, BN statistics recalibrated
  SwagDiagPosterior posterior;
  double clean_test_error = 0.0;  // percent, eval-mode BN
  double final_train_loss = 0.0;
};

/// SGD with momentum on the clean synthetic set, collecting SWAG iterates.
SourceArtifacts train_source(const ExperimentConfig& cfg);

/// Resets BN running statistics to the equal-weight average of batch
/// statistics over one pass of `dataset`.
void recalibrate_batch_norm(MlpClassifier& model, const SyntheticDataset& dataset, std::size_t batch_size);

inline constexpr char kModelFile[] = "source_model.ptta";
inline constexpr char kPosteriorFile[] = "posterior.ptta";

/// Writes model + posterior checkpoints and train_summary.json under
/// cfg.checkpoint_dir.
SourceArtifacts cmd_train_source(const ExperimentConfig& cfg, std::ostream& log);

nlohmann::json run_report_json(const RunReport& report, const ExperimentConfig& cfg, const std::string& method,
                               std::uint64_t seed);
std::string run_report_csv(const RunReport& report);

/// Runs every (method, seed) pair, writing <out>/<method>/seed<s>.{json,csv},
/// <out>/config.json and <out>/summary.json. Returns the summary.
nlohmann::json cmd_adapt(const ExperimentConfig& cfg, std::ostream& log);

struct ReportTable {
  std::string text;
  std::string csv;
};

/// Method x segment comparison over the runs found in `run_dirs`.
ReportTable cmd_report(const std::vector<std::filesystem::path>& run_dirs);

}  // namespace petal
