// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "petal/augment.hpp"
#include "petal/autodiff.hpp"
#include "petal/flat_params.hpp"
#include "petal/metrics.hpp"
#include "petal/model.hpp"
#include "petal/optimizer.hpp"
#include "petal/stream.hpp"
#include "petal/swag.hpp"

namespace petal {

enum class Method { kPetal, kCotta, kTent, kBnAdapt, kPseudoLabel, kSource };

std::string_view to_string(Method method);
Method method_from_string(std::string_view name);

enum class RestoreKind { kNone, kStochastic, kFim };

std::string_view to_string(RestoreKind kind);
RestoreKind restore_from_string(std::string_view name);

enum class PredictFrom { kTeacher, kStudent };

std::string_view to_string(PredictFrom from);
PredictFrom predict_from_string(std::string_view name);

struct PetalConfig {
  Method method = Method::kPetal;
  std::size_t k_aug = 32;
  double tau = 0.72;
  double alpha = 1e-12;  // weight of log q(theta); tuned on impulse_noise (tools/tune_alpha.sh)
  double pi = 0.999;    // teacher EMA smoothing
  double eta = 1e-3;
  RestoreKind restore = RestoreKind::kFim;
  double rho = 0.01;
  double delta = 0.03;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  PredictFrom predict_from = PredictFrom::kTeacher;
  bool reset_optimizer_state = false;
  /// Oracle-assisted: resets to the source model at every segment boundary.
  bool tent_online = false;
  AugmentConfig augment;
  std::size_t threads = 1;

  /// Throws std::invalid_argument on any out-of-range field.
  void validate() const;
};

/// Student, teacher, frozen source model and the RNG streams.
struct AdaptState {
  MlpClassifier student;
  MlpClassifier teacher;
  MlpClassifier source_model;  // theta_0 with source BN statistics; gates augmentation
  FlatParams source;           // theta_0
  std::size_t step = 0;
  Optimizer optimizer;
  std::mt19937_64 augment_rng;
  std::mt19937_64 restore_rng;
};

/// theta_0 = argmax q loaded into `source_model`'s architecture and BN
/// statistics; teacher := student := theta_0.
AdaptState init_state(const SwagDiagPosterior& posterior, const MlpClassifier& source_model,
                      const PetalConfig& cfg, std::uint64_t seed);

struct StepReport {
  Tensor predictions;  // online prediction rows
  std::size_t restored = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

/// Per-sample: the teacher prediction when the source model's max softmax
/// probability is >= tau, otherwise the mean teacher prediction over K
/// augmentations. Teacher forwards normalise with batch statistics.
Tensor teacher_pseudo_label(AdaptState& state, const Tensor& x, const PetalConfig& cfg);

/// -(alpha log q(theta) - mean cross-entropy(targets, student)) on `g`,
/// with the student forward in training BN mode.
struct PetalLoss {
  Var loss;
  TapedForward student;
};
PetalLoss petal_loss(MlpClassifier& student, Graph& g, const Tensor& x, const Tensor& targets,
                     const SwagDiagPosterior& posterior, double alpha);

/// teacher <- pi teacher + (1 - pi) student over trainables; BN running
/// statistics copied from the student.
void ema_update(MlpClassifier& teacher, const MlpClassifier& student, double pi);

using RestoreMask = std::vector<std::uint8_t>;

std::size_t mask_count(std::span<const std::uint8_t> mask);
/// Elementwise square of the gradient.
FlatParams fim_diag(const FlatParams& grad);
/// Marks the floor(delta * D) smallest entries of F, ties to the lower index.
RestoreMask fim_mask(const FlatParams& fisher, double delta);
RestoreMask stochastic_mask(std::size_t dim, double rho, std::mt19937_64& rng);
/// mask * theta0 + (1 - mask) * theta.
FlatParams restore(const FlatParams& theta, const FlatParams& theta0, std::span<const std::uint8_t> mask);

/// One PETAL step (method kPetal).
StepReport adapt_step(AdaptState& state, const Tensor& x, const SwagDiagPosterior& posterior,
                      const PetalConfig& cfg);
/// One step of a comparison method (source, bn_adapt, pseudo_label, tent, cotta).
StepReport baseline_step(AdaptState& state, const Tensor& x, const PetalConfig& cfg);
/// Dispatches on cfg.method.
StepReport run_step(AdaptState& state, const Tensor& x, const SwagDiagPosterior& posterior,
                    const PetalConfig& cfg);

struct StepRecord {
  std::size_t step = 0;
  std::size_t segment = 0;
  double error = 0.0;
  double nll = 0.0;
  double brier = 0.0;
  double loss = 0.0;
  std::size_t restored = 0;
};

struct SegmentSummary {
  CorruptionSpec spec;
  MetricTotals totals;
  double restored_mean = 0.0;
};

struct RunReport {
  std::vector<StepRecord> steps;
  std::vector<SegmentSummary> segments;
  MetricTotals overall;
  double restored_mean = 0.0;
};

/// Seed of the batch stream run_lifelong draws for `seed`; shared by every
/// method so they all see the same batches.
std::uint64_t data_stream_seed(std::uint64_t seed);

/// Online lifelong loop over the whole schedule. Labels only reach the
/// metric accumulator. `final_state`, when given, receives the end state.
RunReport run_lifelong(const StreamSchedule& schedule, const SyntheticDataset& dataset,
                       const SwagDiagPosterior& posterior, const MlpClassifier& source_model,
                       const PetalConfig& cfg, std::uint64_t seed, AdaptState* final_state = nullptr);

/// Percentage error of `model` on `dataset` with batch-statistics BN,
/// evaluated in consecutive batches of `batch_size`.
double clean_error(const MlpClassifier& model, const SyntheticDataset& dataset, std::size_t batch_size,
                   BnMode mode = BnMode::kBatch);

}  // namespace petal
