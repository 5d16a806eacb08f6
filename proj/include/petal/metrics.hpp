// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>

#include "petal/tensor.hpp"

namespace petal {

inline constexpr double kNllProbabilityFloor = 1e-12;

/// Argmax of row `r`, ties to the lowest class index.
std::size_t argmax_row(const Tensor& rows, std::size_t r);

/// Percentage of rows whose argmax differs from the label.
double error_rate(const Tensor& preds, std::span<const int> labels);
/// Mean over rows of sum_c (p_c - onehot_c)^2.
double brier(const Tensor& preds, std::span<const int> labels);
/// Mean over rows of -log max(p_label, 1e-12).
double nll(const Tensor& preds, std::span<const int> labels);

/// Sums of per-sample contributions.
struct MetricTotals {
  double wrong = 0.0;
  double nll_sum = 0.0;
  double brier_sum = 0.0;
  std::size_t count = 0;

  double error() const;  // percent
  double nll() const;
  double brier() const;
  void merge(const MetricTotals& other);
};

class MetricAccumulator {
 public:
  void add(const Tensor& preds, std::span<const int> labels, std::size_t segment);
  void merge(const MetricAccumulator& other);

  const MetricTotals& overall() const { return overall_; }
  const std::map<std::size_t, MetricTotals>& segments() const { return segments_; }

 private:
  MetricTotals overall_;
  std::map<std::size_t, MetricTotals> segments_;
};

}  // namespace petal
