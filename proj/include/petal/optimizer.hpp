// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "petal/flat_params.hpp"

namespace petal {

enum class OptimizerKind { kAdam, kSgd };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(std::string_view name);

/// Descent step on a subset of the flat parameter vector. Adam uses
/// beta1 = 0.9, beta2 = 0.999, eps = 1e-8 with bias correction.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, double lr, std::size_t dim, std::vector<std::size_t> active);

  /// params -= update(grad) on the active coordinates.
  void step(FlatParams& params, const FlatParams& grad);
  /// Zeroes the moments of coordinates where mask is set.
  void reset_moments(std::span<const std::uint8_t> mask);

  std::size_t steps() const { return steps_; }
  const std::vector<std::size_t>& active() const { return active_; }

 private:
  OptimizerKind kind_ = OptimizerKind::kAdam;
  double lr_ = 1e-3;
  std::vector<std::size_t> active_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t steps_ = 0;
};

}  // namespace petal
