// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#include "petal/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace petal {
namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

}  // namespace

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(std::string_view name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

Optimizer::Optimizer(OptimizerKind kind, double lr, std::size_t dim, std::vector<std::size_t> active)
    : kind_(kind), lr_(lr), active_(std::move(active)), m_(dim, 0.0), v_(dim, 0.0) {
  for (auto i : active_) {
    if (i >= dim) throw std::invalid_argument("optimizer index out of range");
  }
}

void Optimizer::step(FlatParams& params, const FlatParams& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw std::invalid_argument("optimizer dimension mismatch");
  }
  ++steps_;
  if (kind_ == OptimizerKind::kSgd) {
    for (auto i : active_) params[i] -= lr_ * grad[i];
    return;
  }
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(kBeta1, t);
  const double c2 = 1.0 - std::pow(kBeta2, t);
  for (auto i : active_) {
    const double g = grad[i];
    m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g;
    v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g * g;
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] -= lr_ * mhat / (std::sqrt(vhat) + kAdamEps);
  }
}

void Optimizer::reset_moments(std::span<const std::uint8_t> mask) {
  if (mask.size() != m_.size()) throw std::invalid_argument("optimizer mask dimension mismatch");
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      m_[i] = 0.0;
      v_[i] = 0.0;
    }
  }
}

}  // namespace petal
