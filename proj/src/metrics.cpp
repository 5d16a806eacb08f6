// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#include "petal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace petal {
namespace {

void check_inputs(const Tensor& preds, std::span<const int> labels) {
  if (labels.empty()) throw std::invalid_argument("metrics need at least one prediction");
  if (preds.rank() != 2 || preds.rows() != labels.size()) {
    throw std::invalid_argument("prediction rows do not match label count");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= preds.cols()) throw std::invalid_argument("label out of range");
  }
}

double row_brier(const Tensor& p, std::size_t r, int label) {
  double s = 0.0;
  for (std::size_t c = 0; c < p.cols(); ++c) {
    const double d = p.at(r, c) - (static_cast<int>(c) == label ? 1.0 : 0.0);
    s += d * d;
  }
  return s;
}

double row_nll(const Tensor& p, std::size_t r, int label) {
  return -std::log(std::max(p.at(r, static_cast<std::size_t>(label)), kNllProbabilityFloor));
}

}  // namespace

std::size_t argmax_row(const Tensor& rows, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < rows.cols(); ++c) {
    if (rows.at(r, c) > rows.at(r, best)) best = c;
  }
  return best;
}

double error_rate(const Tensor& preds, std::span<const int> labels) {
  check_inputs(preds, labels);
  std::size_t wrong = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (argmax_row(preds, r) != static_cast<std::size_t>(labels[r])) ++wrong;
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(labels.size());
}

double brier(const Tensor& preds, std::span<const int> labels) {
  check_inputs(preds, labels);
  double s = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) s += row_brier(preds, r, labels[r]);
  return s / static_cast<double>(labels.size());
}

double nll(const Tensor& preds, std::span<const int> labels) {
  check_inputs(preds, labels);
  double s = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) s += row_nll(preds, r, labels[r]);
  return s / static_cast<double>(labels.size());
}

double MetricTotals::error() const {
  if (count == 0) throw std::logic_error("error() on empty accumulator");
  return 100.0 * wrong / static_cast<double>(count);
}

double MetricTotals::nll() const {
  if (count == 0) throw std::logic_error("nll() on empty accumulator");
  return nll_sum / static_cast<double>(count);
}

double MetricTotals::brier() const {
  if (count == 0) throw std::logic_error("brier() on empty accumulator");
  return brier_sum / static_cast<double>(count);
}

void MetricTotals::merge(const MetricTotals& other) {
  wrong += other.wrong;
  nll_sum += other.nll_sum;
  brier_sum += other.brier_sum;
  count += other.count;
}

void MetricAccumulator::add(const Tensor& preds, std::span<const int> labels, std::size_t segment) {
  check_inputs(preds, labels);
  MetricTotals batch;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (argmax_row(preds, r) != static_cast<std::size_t>(labels[r])) batch.wrong += 1.0;
    batch.nll_sum += row_nll(preds, r, labels[r]);
    batch.brier_sum += row_brier(preds, r, labels[r]);
  }
  batch.count = labels.size();
  overall_.merge(batch);
  segments_[segment].merge(batch);
}

void MetricAccumulator::merge(const MetricAccumulator& other) {
  overall_.merge(other.overall_);
  for (const auto& [seg, totals] : other.segments_) segments_[seg].merge(totals);
}

}  // namespace petal
