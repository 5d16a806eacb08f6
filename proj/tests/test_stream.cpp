// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "petal/engine.hpp"
#include "petal/experiment.hpp"
#include "petal/stream.hpp"

using namespace petal;

namespace {

std::vector<double> image_of(const SyntheticDataset& d, std::size_t i) {
  auto s = d.images.data().subspan(i * kImagePixels, kImagePixels);
  return {s.begin(), s.end()};
}

// Expected gradual pattern: first kind 5..1, each later kind 1..5..1.
std::vector<CorruptionSpec> gradual_oracle(const std::vector<CorruptionKind>& kinds) {
  std::vector<CorruptionSpec> out;
  for (int s : {5, 4, 3, 2, 1}) out.push_back({kinds[0], s});
  for (std::size_t i = 1; i < kinds.size(); ++i)
    for (int s : {1, 2, 3, 4, 5, 4, 3, 2, 1}) out.push_back({kinds[i], s});
  return out;
}

}  // namespace

TEST_CASE("dataset determinism, size and balance") {
  const auto a = make_source_dataset(17, 100);
  const auto b = make_source_dataset(17, 100);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK(a.size() == 800);
  std::vector<int> counts(kGlyphClasses, 0);
  for (int l : a.labels) counts.at(static_cast<std::size_t>(l))++;
  for (int c : counts) CHECK(c == 100);
  for (double v : a.images.data()) CHECK((v >= 0.0 && v <= 1.0));
  CHECK_FALSE(make_source_dataset(18, 100).images == a.images);
  CHECK_THROWS(make_source_dataset(1, 0));
}

TEST_CASE("classes are separable: 5 epochs reach 95% train accuracy") {
  ExperimentConfig cfg;
  cfg.training.epochs = 5;
  cfg.training.swag_epochs = 5;
  const auto art = train_source(cfg);
  const auto train = make_source_dataset(cfg.data.train_seed, cfg.data.train_per_class);
  CHECK(clean_error(art.model, train, 64, BnMode::kEval) <= 5.0);
}

TEST_CASE("corruption severity 0 is the identity; contrast fixes 0.5") {
  const auto d = make_source_dataset(3, 2);
  std::mt19937_64 rng(1);
  for (auto kind : kAllCorruptions) {
    auto img = image_of(d, 5);
    const auto orig = img;
    apply_corruption(img, {kind, 0}, rng);
    CHECK(img == orig);
  }
  std::vector<double> flat(kImagePixels, 0.5);
  apply_corruption(flat, {CorruptionKind::kContrast, 5}, rng);
  for (double v : flat) CHECK(v == 0.5);
  auto img = image_of(d, 0);
  CHECK_THROWS(apply_corruption(img, {CorruptionKind::kBoxBlur, 6}, rng));
  CHECK_THROWS(corruption_from_string("fog"));
  for (auto kind : kAllCorruptions) CHECK(corruption_from_string(to_string(kind)) == kind);
}

TEST_CASE("gaussian noise severity 5 has std 0.26 before clipping") {
  std::mt19937_64 rng(99);
  std::vector<double> deltas;
  while (deltas.size() < 10000) {
    std::vector<double> img(kImagePixels, 0.5);
    apply_corruption_unclipped(img, {CorruptionKind::kGaussianNoise, 5}, rng);
    for (double v : img) deltas.push_back(v - 0.5);
  }
  double m = 0, v = 0;
  for (double x : deltas) m += x;
  m /= static_cast<double>(deltas.size());
  for (double x : deltas) v += (x - m) * (x - m);
  const double sd = std::sqrt(v / static_cast<double>(deltas.size() - 1));
  CHECK(std::abs(sd - 0.26) < 0.05 * 0.26);
}

TEST_CASE("corruptions are clipped, deterministic and severity-monotone") {
  const auto d = make_source_dataset(5, 125);  // 1000 images
  for (auto kind : kAllCorruptions) {
    double previous = 0.0;
    bool in_range = true;
    for (int s = 1; s <= 5; ++s) {
      std::mt19937_64 rng(7);
      double total = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i) {
        auto img = image_of(d, i);
        const auto orig = img;
        apply_corruption(img, {kind, s}, rng);
        double sq = 0.0;
        for (std::size_t p = 0; p < kImagePixels; ++p) {
          in_range = in_range && img[p] >= 0.0 && img[p] <= 1.0;
          sq += (img[p] - orig[p]) * (img[p] - orig[p]);
        }
        total += std::sqrt(sq);
      }
      const double mean = total / static_cast<double>(d.size());
      CHECK_MESSAGE(mean >= previous, to_string(kind), " severity ", s);
      previous = mean;
    }
    CHECK_MESSAGE(in_range, to_string(kind));
  }
  auto a = image_of(d, 3), b = image_of(d, 3);
  std::mt19937_64 r1(5), r2(5);
  apply_corruption(a, {CorruptionKind::kImpulseNoise, 4}, r1);
  apply_corruption(b, {CorruptionKind::kImpulseNoise, 4}, r2);
  CHECK(a == b);
}

TEST_CASE("pixelate and box blur tables") {
  std::vector<double> img(kImagePixels);
  for (std::size_t i = 0; i < kImagePixels; ++i) img[i] = static_cast<double>(i) / 64.0;
  std::mt19937_64 rng(0);
  auto p = img;
  apply_corruption(p, {CorruptionKind::kPixelate, 5}, rng);  // block 8: whole-image mean
  double mean = 0;
  for (double v : img) mean += v;
  mean /= 64;
  for (double v : p) CHECK(std::abs(v - mean) < 1e-15);

  auto q = img;
  apply_corruption(q, {CorruptionKind::kPixelate, 1}, rng);  // block 2
  CHECK(std::abs(q[0] - (img[0] + img[1] + img[8] + img[9]) / 4) < 1e-15);
  CHECK(q[0] == q[9]);

  // A constant image is a fixed point of the edge-clamped box blur.
  std::vector<double> flat(kImagePixels, 0.3);
  apply_corruption(flat, {CorruptionKind::kBoxBlur, 5}, rng);
  for (double v : flat) CHECK(std::abs(v - 0.3) < 1e-15);
}

TEST_CASE("schedule formulas and patterns") {
  using K = CorruptionKind;
  const std::vector<K> three{K::kGaussianNoise, K::kBoxBlur, K::kContrast};
  ScheduleSpec spec{three, ScheduleMode::kGradual, 0, 2, 8};
  const auto s3 = build_schedule(spec);
  CHECK(s3.segments.size() == 23);
  const auto oracle = gradual_oracle(three);
  for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(s3.segments[i].spec == oracle[i]);
  CHECK(s3.total_batches() == 46);

  std::vector<K> fifteen;
  for (int i = 0; i < 15; ++i) fifteen.push_back(kAllCorruptions[static_cast<std::size_t>(i) % 5]);
  spec.kinds = fifteen;
  CHECK(build_schedule(spec).segments.size() == 131);
  for (std::size_t k = 1; k <= 15; ++k) {
    spec.kinds.assign(fifteen.begin(), fifteen.begin() + static_cast<std::ptrdiff_t>(k));
    CHECK(build_schedule(spec).segments.size() == 5 + 9 * (k - 1));
  }

  spec.kinds = {K::kPixelate};
  const auto one = build_schedule(spec);
  std::vector<int> sev;
  for (const auto& seg : one.segments) sev.push_back(seg.spec.severity);
  CHECK(sev == std::vector<int>{5, 4, 3, 2, 1});

  spec.kinds = three;
  spec.mode = ScheduleMode::kContinual5;
  const auto c5 = build_schedule(spec);
  CHECK(c5.segments.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(c5.segments[i].spec == CorruptionSpec{three[i], 5});

  spec.kinds = {K::kGaussianNoise, K::kImpulseNoise, K::kBoxBlur, K::kContrast, K::kPixelate};
  spec.order_seed = 3;
  const auto shuffled = build_schedule(spec);
  std::set<K> seen;
  for (const auto& seg : shuffled.segments) seen.insert(seg.spec.kind);
  CHECK(seen.size() == 5);

  spec.kinds.clear();
  CHECK_THROWS(build_schedule(spec));
}

TEST_CASE("schedule JSON round trip rejects unknown keys") {
  ScheduleSpec spec{{CorruptionKind::kContrast, CorruptionKind::kPixelate}, ScheduleMode::kGradual, 4, 3, 16};
  nlohmann::json j;
  to_json(j, spec);
  ScheduleSpec back;
  from_json(j, back);
  CHECK(back == spec);
  j["extra"] = 1;
  CHECK_THROWS(from_json(j, back));
  CHECK_THROWS(schedule_mode_from_string("sideways"));
}

TEST_CASE("batch stream: counts, segment ids, identity severity, determinism") {
  const auto d = make_source_dataset(2, 10);  // 80 samples
  StreamSchedule sched;
  sched.batch_size = 16;
  sched.segments = {{{CorruptionKind::kGaussianNoise, 0}, 3}, {{CorruptionKind::kContrast, 0}, 3}};
  BatchStream stream(sched, d, 11);
  std::vector<std::size_t> ids;
  std::set<std::size_t> seen_first_segment;
  while (auto b = stream.next()) {
    ids.push_back(b->batch.segment);
    CHECK(b->batch.inputs.rows() == 16);
    // Identity corruption: every row is a clean sample with the matching label.
    for (std::size_t r = 0; r < 16; ++r) {
      bool found = false;
      for (std::size_t i = 0; i < d.size() && !found; ++i) {
        if (d.labels[i] != b->labels[r]) continue;
        bool same = true;
        for (std::size_t p = 0; p < kImagePixels && same; ++p) same = d.images.at(i, p) == b->batch.inputs.at(r, p);
        if (same) {
          found = true;
          if (b->batch.segment == 0) CHECK(seen_first_segment.insert(i).second);  // without replacement
        }
      }
      CHECK(found);
    }
  }
  CHECK(ids == std::vector<std::size_t>{0, 0, 0, 1, 1, 1});

  StreamSchedule noisy = sched;
  noisy.segments[0].spec.severity = 3;
  BatchStream s1(noisy, d, 5), s2(noisy, d, 5);
  while (auto a = s1.next()) {
    auto b = s2.next();
    REQUIRE(b);
    CHECK(a->batch.inputs == b->batch.inputs);
    CHECK(a->labels == b->labels);
  }
  CHECK_FALSE(s2.next());

  StreamSchedule too_big = sched;
  too_big.batch_size = 81;
  CHECK_THROWS(BatchStream(too_big, d, 1));
}
