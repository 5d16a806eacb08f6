// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#include "petal/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace petal {
namespace {

constexpr std::uint64_t kAugmentStream = 0xA7;
constexpr std::uint64_t kRestoreStream = 0x5E;
constexpr std::uint64_t kDataStream = 0xD5;

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

bool updates_all_trainables(Method m) { return m == Method::kPetal || m == Method::kCotta; }

Tensor one_hot_argmax(const Tensor& probs) {
  Tensor out(probs.shape(), 0.0);
  for (std::size_t r = 0; r < probs.rows(); ++r) out.at(r, argmax_row(probs, r)) = 1.0;
  return out;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

void check_finite_loss(double loss, std::size_t step) {
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "non-finite loss " << loss << " at step " << step;
    throw NumericalError(msg.str());
  }
}

// Shared tail of the self-training methods: optimizer step, EMA, restore.
std::size_t update_restore(AdaptState& state, const FlatParams& grad, const PetalConfig& cfg) {
  FlatParams theta = flatten(state.student);
  state.optimizer.step(theta, grad);
  load(state.student, theta);
  ema_update(state.teacher, state.student, cfg.pi);

  RestoreMask mask;
  switch (cfg.restore) {
    case RestoreKind::kNone:
      return 0;
    case RestoreKind::kStochastic:
      mask = stochastic_mask(theta.size(), cfg.rho, state.restore_rng);
      break;
    case RestoreKind::kFim:
      mask = fim_mask(fim_diag(grad), cfg.delta);
      break;
  }
  load(state.student, restore(theta, state.source, mask));
  if (cfg.reset_optimizer_state) state.optimizer.reset_moments(mask);
  return mask_count(mask);
}

StepReport cotta_step(AdaptState& state, const Tensor& x, const PetalConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  StepReport report;
  const Tensor targets = teacher_pseudo_label(state, x, cfg);

  Graph g;
  const TapedForward fwd = forward_taped(state.student, g, x, BnMode::kTrain);
  const Var ce = soft_cross_entropy(g, targets, fwd.logits);
  report.loss = g.value(ce).item();
  check_finite_loss(report.loss, state.step);
  const FlatParams grad = gather_gradients(state.student, fwd, g.backward(ce));

  report.predictions = cfg.predict_from == PredictFrom::kTeacher ? targets : softmax_rows(g.value(fwd.logits));
  report.restored = update_restore(state, grad, cfg);
  ++state.step;
  report.wall_ms = elapsed_ms(t0);
  return report;
}

// TENT and hard pseudo-labelling: one gradient step on the BN affine
// parameters, predictions from the pre-update forward.
StepReport bn_affine_step(AdaptState& state, const Tensor& x, bool entropy) {
  const auto t0 = std::chrono::steady_clock::now();
  StepReport report;
  Graph g;
  const TapedForward fwd = forward_taped(state.student, g, x, BnMode::kTrain);
  report.predictions = softmax_rows(g.value(fwd.logits));
  const Var loss = entropy ? softmax_entropy(g, fwd.logits)
                           : soft_cross_entropy(g, one_hot_argmax(report.predictions), fwd.logits);
  report.loss = g.value(loss).item();
  check_finite_loss(report.loss, state.step);
  const FlatParams grad = gather_gradients(state.student, fwd, g.backward(loss));
  FlatParams theta = flatten(state.student);
  state.optimizer.step(theta, grad);
  load(state.student, theta);
  ++state.step;
  report.wall_ms = elapsed_ms(t0);
  return report;
}

}  // namespace

std::string_view to_string(Method method) {
  switch (method) {
    case Method::kPetal: return "petal";
    case Method::kCotta: return "cotta";
    case Method::kTent: return "tent";
    case Method::kBnAdapt: return "bn_adapt";
    case Method::kPseudoLabel: return "pseudo_label";
    case Method::kSource: return "source";
  }
  throw std::invalid_argument("unknown method");
}

Method method_from_string(std::string_view name) {
  for (auto m : {Method::kPetal, Method::kCotta, Method::kTent, Method::kBnAdapt, Method::kPseudoLabel,
                 Method::kSource}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

std::string_view to_string(RestoreKind kind) {
  switch (kind) {
    case RestoreKind::kNone: return "none";
    case RestoreKind::kStochastic: return "stochastic";
    case RestoreKind::kFim: return "fim";
  }
  throw std::invalid_argument("unknown restore kind");
}

RestoreKind restore_from_string(std::string_view name) {
  for (auto k : {RestoreKind::kNone, RestoreKind::kStochastic, RestoreKind::kFim}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown restore kind '" + std::string(name) + "'");
}

std::string_view to_string(PredictFrom from) { return from == PredictFrom::kTeacher ? "teacher" : "student"; }

PredictFrom predict_from_string(std::string_view name) {
  if (name == "teacher") return PredictFrom::kTeacher;
  if (name == "student") return PredictFrom::kStudent;
  throw std::invalid_argument("unknown prediction source '" + std::string(name) + "'");
}

void PetalConfig::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (k_aug == 0) throw std::invalid_argument("k_aug must be at least 1");
  if (!(tau >= 0.0)) throw std::invalid_argument("tau must be non-negative");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be finite and >= 0");
  if (!unit(pi)) throw std::invalid_argument("pi must be in [0, 1]");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw std::invalid_argument("eta must be finite and >= 0");
  if (!unit(rho)) throw std::invalid_argument("rho must be in [0, 1]");
  if (!unit(delta)) throw std::invalid_argument("delta must be in [0, 1]");
  if (threads == 0) throw std::invalid_argument("threads must be at least 1");
}

AdaptState init_state(const SwagDiagPosterior& posterior, const MlpClassifier& source_model,
                      const PetalConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  AdaptState state;
  state.source = posterior.map_params();
  state.source_model = source_model;
  load(state.source_model, state.source);
  state.student = state.source_model;
  state.teacher = state.source_model;
  const auto filter = updates_all_trainables(cfg.method) ? ParamFilter::all_trainable() : ParamFilter::bn_affine();
  state.optimizer = Optimizer(cfg.optimizer, cfg.eta, state.source.size(), filter.select(state.source));
  state.augment_rng = make_stream(seed, kAugmentStream);
  state.restore_rng = make_stream(seed, kRestoreStream);
  return state;
}

Tensor teacher_pseudo_label(AdaptState& state, const Tensor& x, const PetalConfig& cfg) {
  const Tensor direct = predict_proba(state.teacher, x, BnMode::kBatch);
  const Tensor source = predict_proba(state.source_model, x, BnMode::kEval);
  std::vector<bool> gated(x.rows());
  bool any_augmented = false;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double confidence = source.at(r, argmax_row(source, r));
    gated[r] = confidence >= cfg.tau;
    any_augmented = any_augmented || !gated[r];
  }
  if (!any_augmented) return direct;

  // Draw all augmentations in order so RNG use does not depend on threading.
  std::vector<Tensor> inputs;
  inputs.reserve(cfg.k_aug);
  for (std::size_t i = 0; i < cfg.k_aug; ++i) inputs.push_back(augment(x, state.augment_rng, cfg.augment));

  std::vector<Tensor> probs(cfg.k_aug);
  const std::size_t workers = std::min(cfg.threads, cfg.k_aug);
  const MlpClassifier& teacher = state.teacher;
  auto run = [&](std::size_t w) {
    for (std::size_t i = w; i < cfg.k_aug; i += workers) probs[i] = predict_proba(teacher, inputs[i], BnMode::kBatch);
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < workers; ++w) jobs.push_back(std::async(std::launch::async, run, w));
    for (auto& j : jobs) j.get();
  }

  Tensor mean(direct.shape(), 0.0);
  for (const auto& p : probs)
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += p[k];
  const double k_inv = static_cast<double>(cfg.k_aug);
  Tensor out = direct;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (gated[r]) continue;
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) = mean.at(r, c) / k_inv;
  }
  return out;
}

PetalLoss petal_loss(MlpClassifier& student, Graph& g, const Tensor& x, const Tensor& targets,
                     const SwagDiagPosterior& posterior, double alpha) {
  const FlatParams& mu = posterior.mu();
  const FlatParams& sigma2 = posterior.sigma2();
  {
    const auto names = student.param_names();
    if (mu.layout().size() != names.size()) throw std::invalid_argument("petal_loss: posterior dimension mismatch");
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (mu.layout()[i].name != names[i] || mu.layout()[i].shape != student.param(names[i]).shape()) {
        throw std::invalid_argument("petal_loss: posterior layout mismatch at " + names[i]);
      }
    }
  }
  PetalLoss out;
  out.student = forward_taped(student, g, x, BnMode::kTrain);
  const Var ce = soft_cross_entropy(g, targets, out.student.logits);

  const auto& layout = mu.layout();
  Var log_q = diag_gaussian_log_density(g, out.student.params[0], mu.tensor(layout[0].name),
                                        sigma2.tensor(layout[0].name));
  for (std::size_t i = 1; i < layout.size(); ++i) {
    const Var term = diag_gaussian_log_density(g, out.student.params[i], mu.tensor(layout[i].name),
                                               sigma2.tensor(layout[i].name));
    log_q = add(g, log_q, term);
  }
  out.loss = add(g, ce, scale(g, log_q, -alpha));
  return out;
}

void ema_update(MlpClassifier& teacher, const MlpClassifier& student, double pi) {
  if (teacher.sizes() != student.sizes()) throw std::invalid_argument("ema_update: registry mismatch");
  FlatParams t = flatten(teacher);
  const FlatParams s = flatten(student);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = pi * t[i] + (1.0 - pi) * s[i];
  load(teacher, t);
  teacher.copy_buffers_from(student);
}

std::size_t mask_count(std::span<const std::uint8_t> mask) {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t b) { return b != 0; }));
}

FlatParams fim_diag(const FlatParams& grad) {
  FlatParams f = grad.zeros_like();
  for (std::size_t i = 0; i < grad.size(); ++i) f[i] = grad[i] * grad[i];
  return f;
}

RestoreMask fim_mask(const FlatParams& fisher, double delta) {
  if (!(delta >= 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must be in [0, 1]");
  const std::size_t dim = fisher.size();
  const auto r = static_cast<std::size_t>(std::floor(delta * static_cast<double>(dim)));
  RestoreMask mask(dim, 0);
  if (r == 0) return mask;
  std::vector<std::size_t> idx(dim);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto less = [&](std::size_t a, std::size_t b) {
    return fisher[a] < fisher[b] || (fisher[a] == fisher[b] && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(r - 1), idx.end(), less);
  for (std::size_t k = 0; k < r; ++k) mask[idx[k]] = 1;
  return mask;
}

RestoreMask stochastic_mask(std::size_t dim, double rho, std::mt19937_64& rng) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("rho must be in [0, 1]");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RestoreMask mask(dim, 0);
  for (auto& m : mask) m = unit(rng) < rho ? 1 : 0;
  return mask;
}

FlatParams restore(const FlatParams& theta, const FlatParams& theta0, std::span<const std::uint8_t> mask) {
  theta.require_same_layout(theta0, "restore");
  if (mask.size() != theta.size()) throw std::invalid_argument("restore: mask dimension mismatch");
  FlatParams out = theta;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i]) out[i] = theta0[i];
  }
  return out;
}

StepReport adapt_step(AdaptState& state, const Tensor& x, const SwagDiagPosterior& posterior,
                      const PetalConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  StepReport report;
  const Tensor targets = teacher_pseudo_label(state, x, cfg);

  Graph g;
  const PetalLoss loss = petal_loss(state.student, g, x, targets, posterior, cfg.alpha);
  report.loss = g.value(loss.loss).item();
  check_finite_loss(report.loss, state.step);
  // Gradient of the minimised objective -L; the Fisher diagonal is sign-blind.
  const FlatParams grad = gather_gradients(state.student, loss.student, g.backward(loss.loss));

  report.predictions =
      cfg.predict_from == PredictFrom::kTeacher ? targets : softmax_rows(g.value(loss.student.logits));
  report.restored = update_restore(state, grad, cfg);
  ++state.step;
  report.wall_ms = elapsed_ms(t0);
  return report;
}

StepReport baseline_step(AdaptState& state, const Tensor& x, const PetalConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  StepReport report;
  switch (cfg.method) {
    case Method::kSource:
      report.predictions = predict_proba(state.student, x, BnMode::kEval);
      break;
    case Method::kBnAdapt:
      report.predictions = softmax_rows(forward(state.student, x, BnMode::kTrain));
      break;
    case Method::kTent:
      return bn_affine_step(state, x, /*entropy=*/true);
    case Method::kPseudoLabel:
      return bn_affine_step(state, x, /*entropy=*/false);
    case Method::kCotta:
      return cotta_step(state, x, cfg);
    case Method::kPetal:
      throw std::invalid_argument("baseline_step: petal is not a baseline");
  }
  ++state.step;
  report.wall_ms = elapsed_ms(t0);
  return report;
}

StepReport run_step(AdaptState& state, const Tensor& x, const SwagDiagPosterior& posterior,
                    const PetalConfig& cfg) {
  if (cfg.method == Method::kPetal) return adapt_step(state, x, posterior, cfg);
  return baseline_step(state, x, cfg);
}

std::uint64_t data_stream_seed(std::uint64_t seed) { return make_stream(seed, kDataStream)(); }

RunReport run_lifelong(const StreamSchedule& schedule, const SyntheticDataset& dataset,
                       const SwagDiagPosterior& posterior, const MlpClassifier& source_model,
                       const PetalConfig& cfg, std::uint64_t seed, AdaptState* final_state) {
  RunReport report;
  AdaptState state = init_state(posterior, source_model, cfg, seed);
  if (schedule.segments.empty()) {
    if (final_state) *final_state = std::move(state);
    return report;
  }
  schedule.validate();

  BatchStream stream(schedule, dataset, data_stream_seed(seed));
  MetricAccumulator metrics;
  std::vector<double> restored_sum(schedule.segments.size(), 0.0);
  std::size_t current_segment = 0;
  while (auto item = stream.next()) {
    const UnlabeledBatch& batch = item->batch;
    if (cfg.tent_online && batch.segment != current_segment) {
      AdaptState fresh = init_state(posterior, source_model, cfg, seed);
      fresh.augment_rng = state.augment_rng;
      fresh.restore_rng = state.restore_rng;
      fresh.step = state.step;
      state = std::move(fresh);
    }
    current_segment = batch.segment;

    const StepReport step = run_step(state, batch.inputs, posterior, cfg);
    metrics.add(step.predictions, item->labels, batch.segment);
    restored_sum[batch.segment] += static_cast<double>(step.restored);
    report.steps.push_back(StepRecord{state.step - 1, batch.segment, error_rate(step.predictions, item->labels),
                                      nll(step.predictions, item->labels), brier(step.predictions, item->labels),
                                      step.loss, step.restored});
  }

  double restored_total = 0.0;
  for (std::size_t s = 0; s < schedule.segments.size(); ++s) {
    SegmentSummary summary;
    summary.spec = schedule.segments[s].spec;
    summary.totals = metrics.segments().at(s);
    summary.restored_mean = restored_sum[s] / static_cast<double>(schedule.segments[s].batches);
    restored_total += restored_sum[s];
    report.segments.push_back(summary);
  }
  report.overall = metrics.overall();
  report.restored_mean = restored_total / static_cast<double>(report.steps.size());
  if (final_state) *final_state = std::move(state);
  return report;
}

double clean_error(const MlpClassifier& model, const SyntheticDataset& dataset, std::size_t batch_size,
                   BnMode mode) {
  if (batch_size < 2 || dataset.size() < batch_size) throw std::invalid_argument("clean_error: bad batch size");
  std::size_t wrong = 0, seen = 0;
  for (std::size_t start = 0; start + batch_size <= dataset.size(); start += batch_size) {
    Tensor x(Shape{batch_size, kImagePixels});
    auto src = dataset.images.data().subspan(start * kImagePixels, batch_size * kImagePixels);
    std::copy(src.begin(), src.end(), x.data().begin());
    const Tensor p = predict_proba(model, x, mode);
    for (std::size_t r = 0; r < batch_size; ++r) {
      if (argmax_row(p, r) != static_cast<std::size_t>(dataset.labels[start + r])) ++wrong;
    }
    seen += batch_size;
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(seen);
}

}  // namespace petal
