// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#include "petal/stream.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace petal {
namespace {

// Severity tables, index 0 unused (identity).
constexpr std::array<double, 6> kNoiseStd = {0.0, 0.04, 0.08, 0.12, 0.18, 0.26};
constexpr std::array<double, 6> kImpulseFraction = {0.0, 0.01, 0.03, 0.05, 0.09, 0.14};
constexpr std::array<int, 6> kBlurKernel = {1, 3, 3, 5, 5, 7};
constexpr std::array<int, 6> kBlurPasses = {0, 1, 2, 1, 2, 2};
constexpr std::array<double, 6> kContrastScale = {1.0, 0.75, 0.6, 0.45, 0.3, 0.2};
constexpr std::array<int, 6> kPixelateBlock = {1, 2, 2, 4, 4, 8};

constexpr double kBackgroundNoiseStd = 0.02;

double glyph_intensity(int label, double u, double v) {
  const double r = std::hypot(u, v);
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  switch (label) {
    case 0:  // horizontal bar
      return (std::abs(v) <= 0.9 && std::abs(u) <= 3.0) ? 1.0 : 0.0;
    case 1:  // vertical bar
      return (std::abs(u) <= 0.9 && std::abs(v) <= 3.0) ? 1.0 : 0.0;
    case 2:  // plus
      return ((std::abs(v) <= 0.7 && std::abs(u) <= 3.0) || (std::abs(u) <= 0.7 && std::abs(v) <= 3.0)) ? 1.0
                                                                                                         : 0.0;
    case 3:  // X
      return (r <= 3.6 && (std::abs(u - v) * inv_sqrt2 <= 0.7 || std::abs(u + v) * inv_sqrt2 <= 0.7)) ? 1.0 : 0.0;
    case 4:  // ring
      return std::abs(r - 2.5) <= 0.75 ? 1.0 : 0.0;
    case 5: {  // checker with 2 px cells
      if (std::abs(u) > 3.6 || std::abs(v) > 3.6) return 0.0;
      const auto cu = static_cast<long>(std::floor(u / 2.0));
      const auto cv = static_cast<long>(std::floor(v / 2.0));
      return ((cu + cv) % 2 == 0) ? 1.0 : 0.0;
    }
    case 6:  // disk
      return r <= 2.1 ? 1.0 : 0.0;
    case 7:  // single diagonal stroke
      return (r <= 3.8 && std::abs(u + v) * inv_sqrt2 <= 0.8) ? 1.0 : 0.0;
    default:
      throw std::invalid_argument("unknown glyph class");
  }
}

void render_glyph(int label, std::span<double> image, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> shift(-1.0, 1.0);
  std::uniform_real_distribution<double> angle(-15.0, 15.0);
  std::uniform_real_distribution<double> scale(0.85, 1.15);
  std::uniform_real_distribution<double> fg(0.7, 1.0);
  std::uniform_real_distribution<double> bg(0.0, 0.2);
  std::normal_distribution<double> noise(0.0, kBackgroundNoiseStd);

  const double cx = 3.5 + shift(rng);
  const double cy = 3.5 + shift(rng);
  const double theta = angle(rng) * std::numbers::pi / 180.0;
  const double s = scale(rng);
  const double hi = fg(rng);
  const double lo = bg(rng);
  const double c = std::cos(theta), sn = std::sin(theta);

  constexpr int kSuper = 3;
  for (std::size_t y = 0; y < kImageSide; ++y) {
    for (std::size_t x = 0; x < kImageSide; ++x) {
      double cover = 0.0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = static_cast<double>(x) + (sx + 0.5) / kSuper - 0.5 - cx;
          const double py = static_cast<double>(y) + (sy + 0.5) / kSuper - 0.5 - cy;
          const double u = (c * px + sn * py) / s;
          const double v = (-sn * px + c * py) / s;
          cover += glyph_intensity(label, u, v);
        }
      }
      cover /= kSuper * kSuper;
      const double value = lo + (hi - lo) * cover + noise(rng);
      image[y * kImageSide + x] = std::clamp(value, 0.0, 1.0);
    }
  }
}

void box_blur(std::span<double> image, int kernel) {
  const int half = kernel / 2;
  const int side = static_cast<int>(kImageSide);
  std::array<double, kImagePixels> out{};
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double acc = 0.0;
      for (int dy = -half; dy <= half; ++dy) {
        for (int dx = -half; dx <= half; ++dx) {
          const int yy = std::clamp(y + dy, 0, side - 1);
          const int xx = std::clamp(x + dx, 0, side - 1);
          acc += image[static_cast<std::size_t>(yy * side + xx)];
        }
      }
      out[static_cast<std::size_t>(y * side + x)] = acc / (kernel * kernel);
    }
  }
  std::copy(out.begin(), out.end(), image.begin());
}

void pixelate(std::span<double> image, int block) {
  const int side = static_cast<int>(kImageSide);
  for (int by = 0; by < side; by += block) {
    for (int bx = 0; bx < side; bx += block) {
      double acc = 0.0;
      for (int y = by; y < by + block; ++y)
        for (int x = bx; x < bx + block; ++x) acc += image[static_cast<std::size_t>(y * side + x)];
      const double mean = acc / (block * block);
      for (int y = by; y < by + block; ++y)
        for (int x = bx; x < bx + block; ++x) image[static_cast<std::size_t>(y * side + x)] = mean;
    }
  }
}

}  // namespace

SyntheticDataset make_source_dataset(std::uint64_t seed, std::size_t n_per_class) {
  if (n_per_class == 0) throw std::invalid_argument("n_per_class must be at least 1");
  const std::size_t n = n_per_class * kGlyphClasses;
  SyntheticDataset ds{Tensor(Shape{n, kImagePixels}), std::vector<int>(n), seed};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % kGlyphClasses);
    ds.labels[i] = label;
    render_glyph(label, ds.images.data().subspan(i * kImagePixels, kImagePixels), rng);
  }
  return ds;
}

std::string_view to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::kGaussianNoise: return "gaussian_noise";
    case CorruptionKind::kImpulseNoise: return "impulse_noise";
    case CorruptionKind::kBoxBlur: return "box_blur";
    case CorruptionKind::kContrast: return "contrast";
    case CorruptionKind::kPixelate: return "pixelate";
  }
  throw std::invalid_argument("unknown corruption kind");
}

CorruptionKind corruption_from_string(std::string_view name) {
  for (auto kind : kAllCorruptions) {
    if (to_string(kind) == name) return kind;
  }
  throw std::invalid_argument("unknown corruption kind '" + std::string(name) + "'");
}

void apply_corruption_unclipped(std::span<double> image, const CorruptionSpec& spec, std::mt19937_64& rng) {
  if (image.size() != kImagePixels) throw std::invalid_argument("corruption expects an 8x8 image");
  if (spec.severity < 0 || spec.severity > 5) {
    throw std::invalid_argument("corruption severity must be in 0..5, got " + std::to_string(spec.severity));
  }
  const auto s = static_cast<std::size_t>(spec.severity);
  if (s == 0) return;
  switch (spec.kind) {
    case CorruptionKind::kGaussianNoise: {
      std::normal_distribution<double> noise(0.0, kNoiseStd[s]);
      for (auto& v : image) v += noise(rng);
      break;
    }
    case CorruptionKind::kImpulseNoise: {
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (auto& v : image) {
        if (unit(rng) < kImpulseFraction[s]) v = unit(rng) < 0.5 ? 0.0 : 1.0;
      }
      break;
    }
    case CorruptionKind::kBoxBlur:
      for (int p = 0; p < kBlurPasses[s]; ++p) box_blur(image, kBlurKernel[s]);
      break;
    case CorruptionKind::kContrast:
      for (auto& v : image) v = (v - 0.5) * kContrastScale[s] + 0.5;
      break;
    case CorruptionKind::kPixelate:
      pixelate(image, kPixelateBlock[s]);
      break;
    default:
      throw std::invalid_argument("unknown corruption kind");
  }
}

void apply_corruption(std::span<double> image, const CorruptionSpec& spec, std::mt19937_64& rng) {
  apply_corruption_unclipped(image, spec, rng);
  for (auto& v : image) v = std::clamp(v, 0.0, 1.0);
}

std::size_t StreamSchedule::total_batches() const {
  std::size_t n = 0;
  for (const auto& seg : segments) n += seg.batches;
  return n;
}

void StreamSchedule::validate() const {
  if (segments.empty()) throw std::invalid_argument("schedule has no segments");
  if (batch_size == 0) throw std::invalid_argument("schedule batch size must be positive");
  for (const auto& seg : segments) {
    if (seg.batches == 0) throw std::invalid_argument("schedule segment with zero batches");
    if (seg.spec.severity < 0 || seg.spec.severity > 5) throw std::invalid_argument("schedule severity out of range");
  }
}

std::string_view to_string(ScheduleMode mode) {
  return mode == ScheduleMode::kContinual5 ? "continual5" : "gradual";
}

ScheduleMode schedule_mode_from_string(std::string_view name) {
  if (name == "continual5") return ScheduleMode::kContinual5;
  if (name == "gradual") return ScheduleMode::kGradual;
  throw std::invalid_argument("unknown schedule mode '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const ScheduleSpec& spec) {
  std::vector<std::string> kinds;
  for (auto k : spec.kinds) kinds.emplace_back(to_string(k));
  j = nlohmann::json{{"kinds", kinds},
                     {"mode", std::string(to_string(spec.mode))},
                     {"order_seed", spec.order_seed},
                     {"batches_per_segment", spec.batches_per_segment},
                     {"batch_size", spec.batch_size}};
}

void from_json(const nlohmann::json& j, ScheduleSpec& spec) {
  static const std::array<std::string, 5> known = {"kinds", "mode", "order_seed", "batches_per_segment",
                                                   "batch_size"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown schedule key '" + key + "'");
    }
  }
  if (j.contains("kinds")) {
    spec.kinds.clear();
    for (const auto& k : j.at("kinds")) spec.kinds.push_back(corruption_from_string(k.get<std::string>()));
  }
  if (j.contains("mode")) spec.mode = schedule_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("order_seed")) spec.order_seed = j.at("order_seed").get<std::uint64_t>();
  if (j.contains("batches_per_segment")) spec.batches_per_segment = j.at("batches_per_segment").get<std::size_t>();
  if (j.contains("batch_size")) spec.batch_size = j.at("batch_size").get<std::size_t>();
}

StreamSchedule build_schedule(const ScheduleSpec& spec) {
  if (spec.kinds.empty()) throw std::invalid_argument("schedule needs at least one corruption kind");
  if (spec.batches_per_segment == 0) throw std::invalid_argument("batches_per_segment must be positive");
  std::vector<CorruptionKind> kinds = spec.kinds;
  if (spec.order_seed != 0) {
    std::mt19937_64 rng(spec.order_seed);
    std::shuffle(kinds.begin(), kinds.end(), rng);
  }
  StreamSchedule schedule;
  schedule.batch_size = spec.batch_size;
  auto push = [&](CorruptionKind kind, int severity) {
    schedule.segments.push_back(Segment{CorruptionSpec{kind, severity}, spec.batches_per_segment});
  };
  if (spec.mode == ScheduleMode::kContinual5) {
    for (auto k : kinds) push(k, 5);
  } else {
    for (int s = 5; s >= 1; --s) push(kinds.front(), s);
    for (std::size_t i = 1; i < kinds.size(); ++i) {
      for (int s = 1; s <= 5; ++s) push(kinds[i], s);
      for (int s = 4; s >= 1; --s) push(kinds[i], s);
    }
  }
  schedule.validate();
  return schedule;
}

BatchStream::BatchStream(const StreamSchedule& schedule, const SyntheticDataset& dataset, std::uint64_t seed)
    : schedule_(schedule), dataset_(dataset), rng_(seed), order_(dataset.size()) {
  if (!schedule.segments.empty()) schedule.validate();
  if (schedule.batch_size > dataset.size()) {
    throw std::invalid_argument("batch size exceeds dataset size");
  }
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (!schedule_.segments.empty()) reshuffle();
}

void BatchStream::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::optional<LabeledBatch> BatchStream::next() {
  if (segment_ >= schedule_.segments.size()) return std::nullopt;
  const Segment& seg = schedule_.segments[segment_];
  const std::size_t bs = schedule_.batch_size;
  if (cursor_ + bs > order_.size()) reshuffle();

  LabeledBatch out{UnlabeledBatch{Tensor(Shape{bs, kImagePixels}), segment_}, std::vector<int>(bs)};
  for (std::size_t i = 0; i < bs; ++i) {
    const std::size_t src = order_[cursor_ + i];
    auto dst = out.batch.inputs.data().subspan(i * kImagePixels, kImagePixels);
    auto from = dataset_.images.data().subspan(src * kImagePixels, kImagePixels);
    std::copy(from.begin(), from.end(), dst.begin());
    apply_corruption(dst, seg.spec, rng_);
    out.labels[i] = dataset_.labels[src];
  }
  cursor_ += bs;

  if (++batch_in_segment_ == seg.batches) {
    batch_in_segment_ = 0;
    if (++segment_ < schedule_.segments.size()) reshuffle();
  }
  return out;
}

}  // namespace petal
