// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>

#include "petal/checkpoint.hpp"
#include "petal/flat_params.hpp"

namespace petal {

inline constexpr double kSwagVarianceFloor = 1e-8;

/// Diagonal Gaussian q(theta) = N(mu, diag(sigma2)) over the trainables.
/// Immutable once fitted.
class SwagDiagPosterior {
 public:
  SwagDiagPosterior() = default;
  SwagDiagPosterior(FlatParams mu, FlatParams sigma2, std::size_t iterates);

  const FlatParams& mu() const { return mu_; }
  const FlatParams& sigma2() const { return sigma2_; }
  std::size_t iterates() const { return iterates_; }
  std::size_t dim() const { return mu_.size(); }
  bool fitted() const { return iterates_ > 0; }

  double log_density(const FlatParams& theta) const;
  FlatParams grad_log_density(const FlatParams& theta) const;
  /// argmax of q, which is mu.
  const FlatParams& map_params() const;

 private:
  FlatParams mu_;
  FlatParams sigma2_;
  std::size_t iterates_ = 0;
};

/// Running first/second moments of SGD iterates (Welford).
class SwagDiagBuilder {
 public:
  SwagDiagBuilder() = default;
  explicit SwagDiagBuilder(double variance_floor) : floor_(variance_floor) {}

  void collect(const FlatParams& iterate);
  std::size_t count() const { return count_; }
  /// Throws std::runtime_error("no iterates collected") when empty.
  SwagDiagPosterior finalize() const;

 private:
  double floor_ = kSwagVarianceFloor;
  std::size_t count_ = 0;
  FlatParams mean_;
  FlatParams m2_;
};

/// Entries "swag.mu.<param>", "swag.sigma2.<param>" and a rank-0 "swag.count".
NamedTensors posterior_entries(const SwagDiagPosterior& posterior);
SwagDiagPosterior posterior_from_entries(const NamedTensors& entries);
void save_posterior(const std::filesystem::path& path, const SwagDiagPosterior& posterior);
SwagDiagPosterior load_posterior(const std::filesystem::path& path);

}  // namespace petal
