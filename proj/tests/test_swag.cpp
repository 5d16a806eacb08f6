// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "doctest.h"
#include "petal/swag.hpp"

using namespace petal;

namespace {

FlatParams vec(std::vector<double> v) { return FlatParams::from_values(std::move(v)); }

double gaussian_logpdf(double x, double m, double s2) {
  return -0.5 * std::log(2 * std::numbers::pi * s2) - (x - m) * (x - m) / (2 * s2);
}

}  // namespace

TEST_CASE("two-point and single-iterate moments") {
  SwagDiagBuilder b;
  b.collect(vec({0}));
  b.collect(vec({2}));
  const auto q = b.finalize();
  CHECK(q.mu()[0] == 1.0);
  CHECK(q.sigma2()[0] == 1.0);
  CHECK(q.map_params() == vec({1}));
  CHECK(q.iterates() == 2);

  SwagDiagBuilder s;
  s.collect(vec({4, -1}));
  const auto one = s.finalize();
  CHECK(one.sigma2() == vec({kSwagVarianceFloor, kSwagVarianceFloor}));

  SwagDiagBuilder empty;
  CHECK_THROWS_WITH(empty.finalize(), "no iterates collected");
  CHECK_THROWS(SwagDiagPosterior().map_params());
  CHECK_THROWS_AS(b.collect(vec({1, 2})), std::invalid_argument);
}

TEST_CASE("sampling oracle: 100 draws from N(3, 4)") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n(3.0, 2.0);
  SwagDiagBuilder b;
  for (int i = 0; i < 100; ++i) b.collect(vec({n(rng)}));
  const auto q = b.finalize();
  CHECK(std::abs(q.mu()[0] - 3.0) < 0.6);
  CHECK(std::abs(q.sigma2()[0] - 4.0) < 1.5);
}

TEST_CASE("log_density: closed forms and per-coordinate oracle") {
  const SwagDiagPosterior q(vec({0.5}), vec({1.0}), 1);
  CHECK(std::abs(q.log_density(vec({0.5})) + 0.5 * std::log(2 * std::numbers::pi)) < 1e-15);
  CHECK(std::abs(q.log_density(vec({1.5})) - (q.log_density(vec({0.5})) - 0.5)) < 1e-15);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-2, 2), v(0.1, 3);
  std::vector<double> mu(5), s2(5), th(5);
  for (int i = 0; i < 5; ++i) {
    mu[i] = u(rng);
    s2[i] = v(rng);
    th[i] = u(rng);
  }
  const SwagDiagPosterior r(vec(mu), vec(s2), 3);
  double oracle = 0;
  for (int i = 0; i < 5; ++i) oracle += gaussian_logpdf(th[i], mu[i], s2[i]);
  CHECK(std::abs(r.log_density(vec(th)) - oracle) < 1e-10);
  CHECK_THROWS_AS(r.log_density(vec({1})), std::invalid_argument);
  CHECK_THROWS_AS(SwagDiagPosterior(vec({0}), vec({0.0}), 1), std::invalid_argument);
}

TEST_CASE("grad_log_density: closed forms and finite differences") {
  const SwagDiagPosterior q(vec({1.0}), vec({2.0}), 1);
  CHECK(q.grad_log_density(vec({1.0})) == vec({0.0}));
  CHECK(q.grad_log_density(vec({2.0})) == vec({-0.5}));

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-2, 2), v(0.2, 2);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> mu(6), s2(6), th(6);
    for (int i = 0; i < 6; ++i) {
      mu[i] = u(rng);
      s2[i] = v(rng);
      th[i] = u(rng);
    }
    const SwagDiagPosterior r(vec(mu), vec(s2), 2);
    const FlatParams g = r.grad_log_density(vec(th));
    const FlatParams fd = finite_diff_gradient([&](const FlatParams& p) { return r.log_density(p); }, vec(th), 1e-5);
    for (int i = 0; i < 6; ++i) {
      CHECK(std::abs(g[i] - fd[i]) / std::max({std::abs(g[i]), std::abs(fd[i]), 1e-6}) < 1e-5);
    }
  }
}

TEST_CASE("MAP dominates random perturbations; concavity along lines") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  SwagDiagBuilder b;
  for (int i = 0; i < 7; ++i) b.collect(vec({n(rng), n(rng), n(rng)}));
  const auto q = b.finalize();
  const double at_map = q.log_density(q.map_params());
  for (int i = 0; i < 100; ++i) {
    FlatParams p = q.map_params();
    for (auto& x : p.values()) x += n(rng);
    CHECK(at_map >= q.log_density(p));
    FlatParams a = q.map_params(), c = q.map_params(), mid = q.map_params();
    for (std::size_t k = 0; k < 3; ++k) {
      a[k] += n(rng);
      c[k] += n(rng);
      mid[k] = 0.5 * (a[k] + c[k]);
    }
    CHECK(q.log_density(mid) >= 0.5 * (q.log_density(a) + q.log_density(c)) - 1e-12);
  }
  // Floor keeps the density finite far from the mean.
  CHECK(std::isfinite(q.log_density(vec({1e6, -1e6, 1e6}))));
}

TEST_CASE("posterior checkpoint round trip") {
  FlatParams mu({{"fc0.weight", {2, 2}}, {"bn0.bias", {2}}});
  FlatParams s2 = mu.zeros_like();
  for (std::size_t i = 0; i < mu.size(); ++i) {
    mu[i] = 0.1 * static_cast<double>(i) - 0.2;
    s2[i] = 1e-3 * static_cast<double>(i + 1);
  }
  const SwagDiagPosterior q(mu, s2, 5);
  const auto entries = posterior_entries(q);
  CHECK(entries.front().first == "swag.mu.fc0.weight");
  const auto back = posterior_from_entries(entries);
  CHECK(back.mu() == q.mu());
  CHECK(back.sigma2() == q.sigma2());
  CHECK(back.iterates() == 5);
  const auto path = std::filesystem::temp_directory_path() / "petal_test_posterior.ptta";
  save_posterior(path, q);
  CHECK(load_posterior(path).mu() == q.mu());
  std::filesystem::remove(path);
}
