// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>

#include "petal/tensor.hpp"

namespace petal {

/// Magnitudes of the random test-time augmentation applied per sample.
struct AugmentConfig {
  double brightness = 0.1;        // additive, uniform in +-brightness
  double contrast = 0.2;          // multiplicative about the image mean, +-20%
  int max_shift = 1;              // integer pixel shift per axis
  double max_rotation_deg = 10.0;
  double blur_prob = 0.3;         // 3x3 box blur
  double flip_prob = 0.5;         // horizontal flip
  double noise_std = 0.02;

  /// All magnitudes zero: augment() returns its input unchanged.
  static AugmentConfig identity();
};

/// Augments every row of `batch` ([B x 64] images) independently; output is
/// clipped to [0, 1].
Tensor augment(const Tensor& batch, std::mt19937_64& rng, const AugmentConfig& cfg);

}  // namespace petal
