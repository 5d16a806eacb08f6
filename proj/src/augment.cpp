// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#include "petal/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>

#include "petal/stream.hpp"

namespace petal {
namespace {

using Image = std::array<double, kImagePixels>;

double sample_clamped(const Image& img, double x, double y) {
  const double maxc = static_cast<double>(kImageSide - 1);
  x = std::clamp(x, 0.0, maxc);
  y = std::clamp(y, 0.0, maxc);
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, kImageSide - 1);
  const std::size_t y1 = std::min(y0 + 1, kImageSide - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double top = img[y0 * kImageSide + x0] * (1.0 - fx) + img[y0 * kImageSide + x1] * fx;
  const double bottom = img[y1 * kImageSide + x0] * (1.0 - fx) + img[y1 * kImageSide + x1] * fx;
  return top * (1.0 - fy) + bottom * fy;
}

void affine(Image& img, int dx, int dy, double degrees) {
  const Image src = img;
  const double t = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  constexpr double center = 3.5;
  for (std::size_t y = 0; y < kImageSide; ++y) {
    for (std::size_t x = 0; x < kImageSide; ++x) {
      // Inverse map: undo the shift, then rotate back about the centre.
      const double px = static_cast<double>(x) - dx - center;
      const double py = static_cast<double>(y) - dy - center;
      const double sx = c * px + s * py + center;
      const double sy = -s * px + c * py + center;
      img[y * kImageSide + x] = sample_clamped(src, sx, sy);
    }
  }
}

void blur3(Image& img) {
  const Image src = img;
  const int side = static_cast<int>(kImageSide);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          acc += src[static_cast<std::size_t>(std::clamp(y + dy, 0, side - 1) * side + std::clamp(x + dx, 0, side - 1))];
      img[static_cast<std::size_t>(y * side + x)] = acc / 9.0;
    }
  }
}

void flip_horizontal(Image& img) {
  for (std::size_t y = 0; y < kImageSide; ++y) {
    std::reverse(img.begin() + static_cast<std::ptrdiff_t>(y * kImageSide),
                 img.begin() + static_cast<std::ptrdiff_t>((y + 1) * kImageSide));
  }
}

}  // namespace

AugmentConfig AugmentConfig::identity() {
  return AugmentConfig{0.0, 0.0, 0, 0.0, 0.0, 0.0, 0.0};
}

Tensor augment(const Tensor& batch, std::mt19937_64& rng, const AugmentConfig& cfg) {
  if (batch.rank() != 2 || batch.cols() != kImagePixels) {
    throw std::invalid_argument("augment expects [B x 64] images");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor out = batch;
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    Image img;
    auto row = out.data().subspan(r * kImagePixels, kImagePixels);
    std::copy(row.begin(), row.end(), img.begin());

    if (cfg.brightness > 0.0) {
      const double delta = cfg.brightness * (2.0 * unit(rng) - 1.0);
      for (auto& v : img) v += delta;
    }
    if (cfg.contrast > 0.0) {
      const double factor = 1.0 + cfg.contrast * (2.0 * unit(rng) - 1.0);
      double mean = 0.0;
      for (double v : img) mean += v;
      mean /= static_cast<double>(kImagePixels);
      for (auto& v : img) v = (v - mean) * factor + mean;
    }
    if (cfg.max_shift > 0 || cfg.max_rotation_deg > 0.0) {
      std::uniform_int_distribution<int> shift(-cfg.max_shift, cfg.max_shift);
      const int dx = shift(rng);
      const int dy = shift(rng);
      const double deg = cfg.max_rotation_deg * (2.0 * unit(rng) - 1.0);
      affine(img, dx, dy, deg);
    }
    if (cfg.blur_prob > 0.0 && unit(rng) < cfg.blur_prob) blur3(img);
    if (cfg.flip_prob > 0.0 && unit(rng) < cfg.flip_prob) flip_horizontal(img);
    if (cfg.noise_std > 0.0) {
      std::normal_distribution<double> noise(0.0, cfg.noise_std);
      for (auto& v : img) v += noise(rng);
    }
    for (std::size_t i = 0; i < kImagePixels; ++i) row[i] = std::clamp(img[i], 0.0, 1.0);
  }
  return out;
}

}  // namespace petal
