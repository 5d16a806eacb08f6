// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "petal/autodiff.hpp"
#include "petal/flat_params.hpp"
#include "petal/tensor.hpp"

using namespace petal;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

double rel_err(double a, double f) { return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-6}); }

// Compares autodiff against central differences for a scalar function of
// one input tensor.
double max_grad_error(const Tensor& x0, const std::function<Var(Graph&, Var)>& build) {
  Graph g;
  const Var x = g.leaf(x0);
  const Var root = build(g, x);
  const Tensor analytic = g.backward(root)[x];
  FlatParams p = FlatParams::from_values(x0.storage());
  const FlatParams fd = finite_diff_gradient(
      [&](const FlatParams& q) {
        Graph h(Graph::Mode::kNoGrad);
        Tensor t(x0.shape(), std::vector<double>(q.values().begin(), q.values().end()));
        return h.value(build(h, h.leaf(t))).item();
      },
      p, 1e-5);
  double worst = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) worst = std::max(worst, rel_err(analytic[i], fd[i]));
  return worst;
}

// Triple-loop oracle.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c(Shape{a.rows(), b.cols()}, 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) c.at(i, j) += a.at(i, k) * b.at(k, j);
  return c;
}

}  // namespace

TEST_CASE("tensor construction and invariants") {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.at(1, 2) == 6);
  CHECK(Tensor::scalar(2.5).item() == 2.5);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  CHECK_THROWS(m.item());
  Tensor bad = Tensor::vector({1.0, std::nan("")});
  CHECK_FALSE(bad.all_finite());
  CHECK_THROWS_AS(require_finite(bad, "test"), NumericalError);
}

TEST_CASE("linear: identity weights, zero input, triple-loop oracle") {
  Graph g;
  Var y = linear(g, g.leaf(Tensor::matrix({{1, 2}})), g.leaf(Tensor::matrix({{1, 0}, {0, 1}})),
                 g.leaf(Tensor::vector({0, 0})));
  CHECK(g.value(y) == Tensor::matrix({{1, 2}}));

  Var z = linear(g, g.leaf(Tensor::matrix({{0, 0}})), g.leaf(Tensor::matrix({{7, -3}, {2, 9}})),
                 g.leaf(Tensor::vector({3, 4})));
  CHECK(g.value(z) == Tensor::matrix({{3, 4}}));

  std::mt19937_64 rng(11);
  const Tensor a = random_tensor({3, 4}, rng), w = random_tensor({4, 2}, rng), b = random_tensor({2}, rng);
  const Tensor out = linear_forward(a, w, b);
  const Tensor oracle = naive_matmul(a, w);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(out.at(i, j) - (oracle.at(i, j) + b[j])) < 1e-12);

  CHECK_THROWS_AS(linear(g, g.leaf(Tensor::matrix({{1, 2, 3}})), g.leaf(Tensor::matrix({{1, 0}, {0, 1}})),
                         g.leaf(Tensor::vector({0, 0}))),
                  std::invalid_argument);
}

TEST_CASE("matmul and transpose agree with the oracle") {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor({5, 7}, rng), b = random_tensor({7, 3}, rng);
  const Tensor c = matmul(a, b), o = naive_matmul(a, b);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::abs(c[i] - o[i]) < 1e-12);
  const Tensor at = transpose(a);
  CHECK(at.rows() == 7);
  CHECK(at.at(4, 2) == a.at(2, 4));
}

TEST_CASE("relu values and subgradient convention") {
  Graph g;
  Var x = g.leaf(Tensor::vector({-1, 0, 2}));
  Var y = relu(g, x);
  CHECK(g.value(y) == Tensor::vector({0, 0, 2}));
  auto grads = g.backward(sum(g, y));
  CHECK(grads[x] == Tensor::vector({0, 0, 1}));

  Graph h;
  Var n = h.leaf(Tensor::vector({-3, -0.5}));
  Var r = relu(h, n);
  CHECK(h.value(r) == Tensor::vector({0, 0}));
  CHECK(h.backward(sum(h, r))[n] == Tensor::vector({0, 0}));
}

TEST_CASE("batch_norm hand computation and modes") {
  Graph g;
  RunningStats stats(1);
  Var y = batch_norm(g, g.leaf(Tensor::matrix({{1}, {3}})), g.leaf(Tensor::vector({1})), g.leaf(Tensor::vector({0})),
                     stats, BnMode::kTrain);
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(std::abs(g.value(y).at(0, 0) + expect) < 1e-12);
  CHECK(std::abs(g.value(y).at(1, 0) - expect) < 1e-12);
  // momentum 0.1 update: mean 0.9*0 + 0.1*2, var 0.9*1 + 0.1*2 (unbiased)
  CHECK(std::abs(stats.mean[0] - 0.2) < 1e-15);
  CHECK(std::abs(stats.var[0] - 1.1) < 1e-15);

  RunningStats untouched(1);
  Var yb = batch_norm(g, g.leaf(Tensor::matrix({{1}, {3}})), g.leaf(Tensor::vector({1})), g.leaf(Tensor::vector({0})),
                      untouched, BnMode::kBatch);
  CHECK(g.value(yb) == g.value(y));
  CHECK(untouched.mean[0] == 0.0);
  CHECK(untouched.var[0] == 1.0);

  RunningStats s2(2);
  Var z = batch_norm(g, g.leaf(Tensor::matrix({{5, -2}, {7, 1}})), g.leaf(Tensor::vector({0, 0})),
                     g.leaf(Tensor::vector({0.25, -1})), s2, BnMode::kTrain);
  CHECK(g.value(z) == Tensor::matrix({{0.25, -1}, {0.25, -1}}));

  RunningStats id(2);
  Var e = batch_norm(g, g.leaf(Tensor::matrix({{0.3, -0.7}})), g.leaf(Tensor::vector({1, 1})),
                     g.leaf(Tensor::vector({0, 0})), id, BnMode::kEval);
  CHECK(std::abs(g.value(e).at(0, 0) - 0.3 / std::sqrt(1 + 1e-5)) < 1e-15);

  RunningStats one(1);
  CHECK_THROWS_AS(batch_norm(g, g.leaf(Tensor::matrix({{1}})), g.leaf(Tensor::vector({1})),
                             g.leaf(Tensor::vector({0})), one, BnMode::kTrain),
                  std::invalid_argument);
}

TEST_CASE("batch_norm train output is standardised") {
  std::mt19937_64 rng(5);
  Graph g;
  RunningStats stats(6);
  const Tensor x = random_tensor({32, 6}, rng, -4, 9);
  const Tensor y = g.value(batch_norm(g, g.leaf(x), g.leaf(Tensor(Shape{6}, 1.0)), g.leaf(Tensor(Shape{6}, 0.0)),
                                      stats, BnMode::kTrain));
  for (std::size_t f = 0; f < 6; ++f) {
    double m = 0, v = 0;
    for (std::size_t b = 0; b < 32; ++b) m += y.at(b, f);
    m /= 32;
    for (std::size_t b = 0; b < 32; ++b) v += (y.at(b, f) - m) * (y.at(b, f) - m);
    v /= 32;
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(v - 1.0) < 1e-4);
  }
}

TEST_CASE("softmax symmetry, stability and normalisation") {
  CHECK(softmax_rows(Tensor::matrix({{0, 0}})) == Tensor::matrix({{0.5, 0.5}}));
  const Tensor big = softmax_rows(Tensor::matrix({{1000, 0}}));
  CHECK(big.all_finite());
  CHECK(big.at(0, 0) == 1.0);
  CHECK(big.at(0, 1) < 1e-300);
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor p = softmax_rows(random_tensor({4, 7}, rng, -1e4, 1e4));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) s += p.at(r, c);
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("soft_cross_entropy values, closed-form gradient and oracle") {
  Graph g;
  Var l0 = soft_cross_entropy(g, Tensor::matrix({{1, 0}}), g.leaf(Tensor::matrix({{800, 0}})));
  CHECK(g.value(l0).item() == 0.0);
  Var l1 = soft_cross_entropy(g, Tensor::matrix({{0.5, 0.5}}), g.leaf(Tensor::matrix({{0, 0}})));
  CHECK(std::abs(g.value(l1).item() - std::log(2.0)) < 1e-15);

  std::mt19937_64 rng(21);
  const Tensor logits = random_tensor({3, 5}, rng, -3, 3);
  Tensor target = softmax_rows(random_tensor({3, 5}, rng, -2, 2));
  Graph h;
  Var z = h.leaf(logits);
  Var loss = soft_cross_entropy(h, target, z);
  double oracle = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    double denom = 0.0;
    for (std::size_t c = 0; c < 5; ++c) denom += std::exp(logits.at(r, c));
    for (std::size_t c = 0; c < 5; ++c) oracle -= target.at(r, c) * std::log(std::exp(logits.at(r, c)) / denom);
  }
  CHECK(std::abs(h.value(loss).item() - oracle / 3) < 1e-10);
  const Tensor grad = h.backward(loss)[z];
  const Tensor p = softmax_rows(logits);
  for (std::size_t i = 0; i < grad.size(); ++i) CHECK(std::abs(grad[i] - (p[i] - target[i]) / 3) < 1e-15);

  // Gradient vanishes where softmax(logits) equals the target.
  Graph k;
  Var zz = k.leaf(logits);
  const Tensor gz = k.backward(soft_cross_entropy(k, p, zz))[zz];
  for (double v : gz.data()) CHECK(std::abs(v) < 1e-15);

  CHECK_THROWS_AS(soft_cross_entropy(g, Tensor::matrix({{0.7, 0.7}}), g.leaf(Tensor::matrix({{0, 0}}))),
                  std::invalid_argument);
  CHECK_THROWS_AS(soft_cross_entropy(g, Tensor::matrix({{1.5, -0.5}}), g.leaf(Tensor::matrix({{0, 0}}))),
                  std::invalid_argument);
}

TEST_CASE("softmax entropy gradient vanishes at uniform") {
  Graph g;
  Var z = g.leaf(Tensor::matrix({{0.3, 0.3, 0.3}, {-1, -1, -1}}));
  Var h = softmax_entropy(g, z);
  CHECK(std::abs(g.value(h).item() - std::log(3.0)) < 1e-15);
  const GradientMap grads = g.backward(h);
  for (double v : grads[z].data()) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("backward rules") {
  Graph g;
  Var t = g.leaf(Tensor::vector({1, -2, 3}));
  CHECK(g.backward(sum(g, t))[t] == Tensor::vector({1, 1, 1}));
  CHECK_THROWS_AS(g.backward(t), std::invalid_argument);

  Graph n(Graph::Mode::kNoGrad);
  Var u = n.leaf(Tensor::vector({1}));
  CHECK_THROWS(n.backward(sum(n, u)));

  // Unused leaves receive zero gradients of matching shape.
  Graph q;
  Var a = q.leaf(Tensor::vector({2, 2}));
  Var unused = q.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
  auto grads = q.backward(sum(q, scale(q, a, 3.0)));
  CHECK(grads[a] == Tensor::vector({3, 3}));
  CHECK(grads[unused] == Tensor(Shape{2, 2}, 0.0));

  Graph overflow;
  Var big = overflow.leaf(Tensor::vector({1e308}));
  CHECK_THROWS_AS(scale(overflow, big, 10.0), NumericalError);
}

TEST_CASE("diag_gaussian_log_density value and gradient") {
  Graph g;
  Var x = g.leaf(Tensor::vector({1.5}));
  Var lp = diag_gaussian_log_density(g, x, Tensor::vector({0.5}), Tensor::vector({2.0}));
  CHECK(std::abs(g.value(lp).item() - (-0.25 - 0.5 * std::log(2 * M_PI * 2))) < 1e-15);
  CHECK(std::abs(g.backward(lp)[x][0] + 0.5) < 1e-15);
}

TEST_CASE("every differentiable op matches finite differences on 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor w = random_tensor({4, 3}, rng), b = random_tensor({3}, rng);
    const Tensor target = softmax_rows(random_tensor({5, 3}, rng));
    const Tensor gamma = random_tensor({4}, rng, 0.5, 1.5), beta = random_tensor({4}, rng);
    const Tensor mu = random_tensor({5, 4}, rng), s2 = random_tensor({5, 4}, rng, 0.5, 2.0);
    const Tensor x0 = random_tensor({5, 4}, rng, -2, 2);

    CHECK(max_grad_error(x0, [&](Graph& g, Var x) {
            return soft_cross_entropy(g, target, linear(g, x, g.constant(w), g.constant(b)));
          }) < 1e-4);
    CHECK(max_grad_error(x0, [&](Graph& g, Var x) {
            RunningStats st(4);
            Var y = batch_norm(g, x, g.constant(gamma), g.constant(beta), st, BnMode::kBatch);
            return softmax_entropy(g, linear(g, y, g.constant(w), g.constant(b)));
          }) < 1e-4);
    CHECK(max_grad_error(x0, [&](Graph& g, Var x) {
            Var s = softmax(g, x);
            return sum(g, scale(g, add(g, s, g.constant(mu)), 0.7));
          }) < 1e-4);
    CHECK(max_grad_error(x0, [&](Graph& g, Var x) { return diag_gaussian_log_density(g, x, mu, s2); }) < 1e-4);
    // Uniform draws sit at distance > h from the ReLU kink with probability ~1.
    CHECK(max_grad_error(x0, [&](Graph& g, Var x) { return sum(g, relu(g, x)); }) < 1e-4);
  }
}

TEST_CASE("finite_diff_gradient oracle") {
  const FlatParams p = FlatParams::from_values({3.0});
  CHECK(std::abs(finite_diff_gradient([](const FlatParams& q) { return q[0] * q[0]; }, p, 1e-5)[0] - 6.0) < 1e-6);
  const FlatParams z =
      finite_diff_gradient([](const FlatParams&) { return 4.2; }, FlatParams::from_values({1, 2, 3}), 1e-5);
  for (double v : z.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(finite_diff_gradient([](const FlatParams&) { return 0.0; }, p, 0.0), std::invalid_argument);

  // f = th^T A th with symmetric A: gradient 2 A th.
  const double a[3][3] = {{2, 0.5, -1}, {0.5, 3, 0.25}, {-1, 0.25, 1}};
  const FlatParams th = FlatParams::from_values({0.3, -1.2, 2.0});
  const FlatParams fd = finite_diff_gradient(
      [&](const FlatParams& q) {
        double s = 0;
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) s += q[i] * a[i][j] * q[j];
        return s;
      },
      th, 1e-5);
  for (int i = 0; i < 3; ++i) {
    double g = 0;
    for (int j = 0; j < 3; ++j) g += 2 * a[i][j] * th[j];
    CHECK(std::abs(fd[i] - g) < 1e-5);
  }
}
