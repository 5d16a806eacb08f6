// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "petal/tensor.hpp"

namespace petal {

inline constexpr std::size_t kImageSide = 8;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;
inline constexpr std::size_t kGlyphClasses = 8;

/// Procedurally drawn 8x8 glyphs: horizontal bar, vertical bar, plus, X,
/// ring, checker, disk, diagonal stroke. Images are rows of `images`.
struct SyntheticDataset {
  Tensor images;            // [N x 64], values in [0, 1]
  std::vector<int> labels;  // N ids in [0, 8)
  std::uint64_t seed = 0;

  std::size_t size() const { return labels.size(); }
};

SyntheticDataset make_source_dataset(std::uint64_t seed, std::size_t n_per_class);

enum class CorruptionKind { kGaussianNoise, kImpulseNoise, kBoxBlur, kContrast, kPixelate };

inline constexpr std::array<CorruptionKind, 5> kAllCorruptions = {
    CorruptionKind::kGaussianNoise, CorruptionKind::kImpulseNoise, CorruptionKind::kBoxBlur,
    CorruptionKind::kContrast, CorruptionKind::kPixelate};

/// Held out for hyperparameter tuning; never part of headline schedules.
inline constexpr CorruptionKind kTuningCorruption = CorruptionKind::kImpulseNoise;

std::string_view to_string(CorruptionKind kind);
/// Throws std::invalid_argument for an unknown name.
CorruptionKind corruption_from_string(std::string_view name);

/// Severity 0 is the identity; 1..5 are the benchmark levels.
struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kGaussianNoise;
  int severity = 5;
  friend bool operator==(const CorruptionSpec&, const CorruptionSpec&) = default;
};

/// In-place corruption of one image, clipped to [0, 1].
void apply_corruption(std::span<double> image, const CorruptionSpec& spec, std::mt19937_64& rng);
/// As apply_corruption but without the final clip.
void apply_corruption_unclipped(std::span<double> image, const CorruptionSpec& spec,
                                std::mt19937_64& rng);

struct Segment {
  CorruptionSpec spec;
  std::size_t batches = 1;
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct StreamSchedule {
  std::vector<Segment> segments;
  std::size_t batch_size = 64;

  std::size_t total_batches() const;
  /// Throws unless non-empty with at least one batch per segment.
  void validate() const;
};

enum class ScheduleMode { kContinual5, kGradual };

std::string_view to_string(ScheduleMode mode);
ScheduleMode schedule_mode_from_string(std::string_view name);

/// Serializable description that build_schedule expands. `order_seed` 0
/// keeps `kinds` in the given order; any other value shuffles them.
struct ScheduleSpec {
  std::vector<CorruptionKind> kinds;
  ScheduleMode mode = ScheduleMode::kContinual5;
  std::uint64_t order_seed = 0;
  std::size_t batches_per_segment = 25;
  std::size_t batch_size = 64;
  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

void to_json(nlohmann::json& j, const ScheduleSpec& spec);
void from_json(const nlohmann::json& j, ScheduleSpec& spec);

/// continual5: each kind once at severity 5. gradual: first kind 5..1, each
/// following kind 1..5..1, giving 5 + 9 (k - 1) segments.
StreamSchedule build_schedule(const ScheduleSpec& spec);

/// What the adaptation engine sees: inputs only.
struct UnlabeledBatch {
  Tensor inputs;  // [B x 64]
  std::size_t segment = 0;
};

/// Engine-facing batch plus the labels the metric stream keeps to itself.
struct LabeledBatch {
  UnlabeledBatch batch;
  std::vector<int> labels;
};

/// Walks a schedule over a dataset. Each segment reshuffles the dataset and
/// draws without replacement, reshuffling again only if the segment needs
/// more samples than the dataset holds. Corruption noise comes from the
/// stream's own RNG.
class BatchStream {
 public:
  BatchStream(const StreamSchedule& schedule, const SyntheticDataset& dataset, std::uint64_t seed);

  std::optional<LabeledBatch> next();

 private:
  void reshuffle();

  const StreamSchedule& schedule_;
  const SyntheticDataset& dataset_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t segment_ = 0;
  std::size_t batch_in_segment_ = 0;
};

}  // namespace petal
