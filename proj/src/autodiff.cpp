// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#include "petal/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace petal {

const Tensor& GradientMap::operator[](Var v) const {
  if (!has(v)) throw std::out_of_range("no gradient recorded for node " + std::to_string(v.id));
  return *grads_[v.id];
}

Tensor& GradientMap::slot(Var v, const Shape& shape) {
  if (v.id >= grads_.size()) grads_.resize(v.id + 1);
  auto& g = grads_[v.id];
  if (!g) g.emplace(shape, 0.0);
  return *g;
}

Var Graph::leaf(Tensor value) { return record(std::move(value), {}, nullptr, "leaf"); }

Var Graph::constant(Tensor value) { return record(std::move(value), {}, nullptr, "constant"); }

Var Graph::record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op) {
  require_finite(value, op);
  Node node{std::move(value), {}, {}, op};
  if (recording()) {
    node.inputs = std::move(inputs);
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

GradientMap Graph::backward(Var root) const {
  if (!recording()) throw std::logic_error("backward() on a graph built without recording");
  if (root.id >= nodes_.size()) throw std::out_of_range("backward root is not on this graph");
  if (nodes_[root.id].value.rank() != 0) {
    throw std::invalid_argument("backward root must be a scalar, got shape " +
                                shape_string(nodes_[root.id].value.shape()));
  }
  GradientMap grads(nodes_.size());
  grads.slot(root, Shape{})[0] = 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!grads.has(Var{i}) || !node.backward) continue;
    // Copy: the closure may grow the slot vector and invalidate references.
    const Tensor upstream = grads[Var{i}];
    node.backward(upstream, grads);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) grads.slot(Var{i}, nodes_[i].value.shape());
  return grads;
}

void require_distribution_rows(const Tensor& target, const char* where) {
  if (target.rank() != 2) throw std::invalid_argument(std::string(where) + ": target must be [B x C]");
  for (std::size_t i = 0; i < target.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < target.cols(); ++j) {
      const double v = target.at(i, j);
      if (!(v >= 0.0)) throw std::invalid_argument(std::string(where) + ": negative target entry");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw std::invalid_argument(std::string(where) + ": target row " + std::to_string(i) +
                                  " sums to " + std::to_string(s));
    }
  }
}

Var linear(Graph& g, Var x, Var weight, Var bias) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(weight);
  Tensor out = linear_forward(xv, wv, g.value(bias));
  Graph::BackwardFn fn;
  if (g.recording()) {
    fn = [x, weight, bias, xv, wv](const Tensor& go, GradientMap& grads) {
      const std::size_t batch = go.rows(), outs = go.cols(), ins = wv.rows();
      Tensor& gb = grads.slot(bias, Shape{outs});
      for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < outs; ++j) gb[j] += go.at(i, j);
      Tensor& gw = grads.slot(weight, wv.shape());
      const Tensor gw_add = matmul(transpose(xv), go);
      for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += gw_add[k];
      Tensor& gx = grads.slot(x, xv.shape());
      for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t p = 0; p < ins; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < outs; ++j) acc += go.at(i, j) * wv.at(p, j);
          gx.at(i, p) += acc;
        }
      }
    };
  }
  return g.record(std::move(out), {x, weight, bias}, std::move(fn), "linear");
}

Var relu(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  Graph::BackwardFn fn;
  if (g.recording()) {
    fn = [x, xv](const Tensor& go, GradientMap& grads) {
      Tensor& gx = grads.slot(x, xv.shape());
      for (std::size_t i = 0; i < xv.size(); ++i)
        if (xv[i] > 0.0) gx[i] += go[i];
    };
  }
  return g.record(std::move(out), {x}, std::move(fn), "relu");
}

Var batch_norm(Graph& g, Var x, Var gamma, Var beta, RunningStats& stats, BnMode mode,
               double momentum) {
  const Tensor& xv = g.value(x);
  const Tensor& gv = g.value(gamma);
  const Tensor& bv = g.value(beta);
  if (xv.rank() != 2 || gv.size() != xv.cols() || bv.size() != xv.cols() ||
      stats.mean.size() != xv.cols() || stats.var.size() != xv.cols()) {
    throw std::invalid_argument("batch_norm shape mismatch: x" + shape_string(xv.shape()));
  }
  const std::size_t batch = xv.rows(), features = xv.cols();
  const bool use_batch = mode != BnMode::kEval;
  if (use_batch && batch < 2) {
    throw std::invalid_argument("batch_norm with batch statistics needs at least 2 rows");
  }

  Tensor mean(Shape{features}), var(Shape{features});
  if (use_batch) {
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t f = 0; f < features; ++f) mean[f] += xv.at(i, f);
    for (std::size_t f = 0; f < features; ++f) mean[f] /= static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t f = 0; f < features; ++f) {
        const double d = xv.at(i, f) - mean[f];
        var[f] += d * d;
      }
    }
    for (std::size_t f = 0; f < features; ++f) var[f] /= static_cast<double>(batch);
  } else {
    mean = stats.mean;
    var = stats.var;
  }

  Tensor inv_std(Shape{features});
  for (std::size_t f = 0; f < features; ++f) inv_std[f] = 1.0 / std::sqrt(var[f] + kBatchNormEps);
  Tensor xhat(xv.shape()), out(xv.shape());
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t f = 0; f < features; ++f) {
      xhat.at(i, f) = (xv.at(i, f) - mean[f]) * inv_std[f];
      out.at(i, f) = gv[f] * xhat.at(i, f) + bv[f];
    }
  }

  if (mode == BnMode::kTrain) {
    // Running variance tracks the unbiased estimate.
    const double unbias = static_cast<double>(batch) / static_cast<double>(batch - 1);
    for (std::size_t f = 0; f < features; ++f) {
      stats.mean[f] = (1.0 - momentum) * stats.mean[f] + momentum * mean[f];
      stats.var[f] = (1.0 - momentum) * stats.var[f] + momentum * var[f] * unbias;
    }
  }

  Graph::BackwardFn fn;
  if (g.recording()) {
    fn = [x, gamma, beta, gv, xhat, inv_std, use_batch](const Tensor& go, GradientMap& grads) {
      const std::size_t n = go.rows(), nf = go.cols();
      Tensor& gg = grads.slot(gamma, Shape{nf});
      Tensor& gb = grads.slot(beta, Shape{nf});
      std::vector<double> sum_dxhat(nf, 0.0), sum_dxhat_xhat(nf, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < nf; ++f) {
          gg[f] += go.at(i, f) * xhat.at(i, f);
          gb[f] += go.at(i, f);
          const double dxhat = go.at(i, f) * gv[f];
          sum_dxhat[f] += dxhat;
          sum_dxhat_xhat[f] += dxhat * xhat.at(i, f);
        }
      }
      Tensor& gx = grads.slot(x, go.shape());
      const double nd = static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < nf; ++f) {
          const double dxhat = go.at(i, f) * gv[f];
          if (use_batch) {
            gx.at(i, f) += inv_std[f] / nd *
                           (nd * dxhat - sum_dxhat[f] - xhat.at(i, f) * sum_dxhat_xhat[f]);
          } else {
            gx.at(i, f) += dxhat * inv_std[f];
          }
        }
      }
    };
  }
  return g.record(std::move(out), {x, gamma, beta}, std::move(fn), "batch_norm");
}

Var softmax(Graph& g, Var logits) {
  Tensor p = softmax_rows(g.value(logits));
  Graph::BackwardFn fn;
  if (g.recording()) {
    fn = [logits, p](const Tensor& go, GradientMap& grads) {
      Tensor& gl = grads.slot(logits, p.shape());
      for (std::size_t i = 0; i < p.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) dot += go.at(i, j) * p.at(i, j);
        for (std::size_t j = 0; j < p.cols(); ++j) gl.at(i, j) += p.at(i, j) * (go.at(i, j) - dot);
      }
    };
  }
  return g.record(std::move(p), {logits}, std::move(fn), "softmax");
}

Var soft_cross_entropy(Graph& g, const Tensor& target, Var logits) {
  const Tensor& lv = g.value(logits);
  if (target.shape() != lv.shape()) {
    throw std::invalid_argument("soft_cross_entropy shape mismatch: target" +
                                shape_string(target.shape()) + " logits" + shape_string(lv.shape()));
  }
  require_distribution_rows(target, "soft_cross_entropy");
  const Tensor logp = log_softmax_rows(lv);
  const double batch = static_cast<double>(lv.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < logp.size(); ++i) total -= target[i] * logp[i];
  Graph::BackwardFn fn;
  if (g.recording()) {
    fn = [logits, target, logp, batch](const Tensor& go, GradientMap& grads) {
      Tensor& gl = grads.slot(logits, logp.shape());
      const double s = go.item() / batch;
      for (std::size_t i = 0; i < logp.size(); ++i) gl[i] += s * (std::exp(logp[i]) - target[i]);
    };
  }
  return g.record(Tensor::scalar(total / batch), {logits}, std::move(fn), "soft_cross_entropy");
}

Var softmax_entropy(Graph& g, Var logits) {
  const Tensor& lv = g.value(logits);
  const Tensor logp = log_softmax_rows(lv);
  const std::size_t rows = lv.rows(), cols = lv.cols();
  std::vector<double> row_entropy(rows, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) row_entropy[i] -= std::exp(logp.at(i, j)) * logp.at(i, j);
    total += row_entropy[i];
  }
  const double batch = static_cast<double>(rows);
  Graph::BackwardFn fn;
  if (g.recording()) {
    fn = [logits, logp, row_entropy, batch](const Tensor& go, GradientMap& grads) {
      Tensor& gl = grads.slot(logits, logp.shape());
      const double s = go.item() / batch;
      for (std::size_t i = 0; i < logp.rows(); ++i) {
        for (std::size_t j = 0; j < logp.cols(); ++j) {
          const double p = std::exp(logp.at(i, j));
          gl.at(i, j) -= s * p * (logp.at(i, j) + row_entropy[i]);
        }
      }
    };
  }
  return g.record(Tensor::scalar(total / batch), {logits}, std::move(fn), "softmax_entropy");
}

Var diag_gaussian_log_density(Graph& g, Var x, const Tensor& mu, const Tensor& sigma2) {
  const Tensor& xv = g.value(x);
  if (mu.size() != xv.size() || sigma2.size() != xv.size()) {
    throw std::invalid_argument("gaussian log density dimension mismatch");
  }
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double d = xv[i] - mu[i];
    total += -d * d / (2.0 * sigma2[i]) - 0.5 * std::log(two_pi * sigma2[i]);
  }
  Graph::BackwardFn fn;
  if (g.recording()) {
    fn = [x, xv, mu, sigma2](const Tensor& go, GradientMap& grads) {
      Tensor& gx = grads.slot(x, xv.shape());
      const double s = go.item();
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += s * (-(xv[i] - mu[i]) / sigma2[i]);
    };
  }
  return g.record(Tensor::scalar(total), {x}, std::move(fn), "diag_gaussian_log_density");
}

Var sum(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  double total = 0.0;
  for (double v : xv.data()) total += v;
  Graph::BackwardFn fn;
  if (g.recording()) {
    fn = [x, shape = xv.shape()](const Tensor& go, GradientMap& grads) {
      Tensor& gx = grads.slot(x, shape);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go.item();
    };
  }
  return g.record(Tensor::scalar(total), {x}, std::move(fn), "sum");
}

Var add(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.shape() != bv.shape()) throw std::invalid_argument("add shape mismatch");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Graph::BackwardFn fn;
  if (g.recording()) {
    fn = [a, b](const Tensor& go, GradientMap& grads) {
      Tensor& ga = grads.slot(a, go.shape());
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      Tensor& gb = grads.slot(b, go.shape());
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
    };
  }
  return g.record(std::move(out), {a, b}, std::move(fn), "add");
}

Var scale(Graph& g, Var a, double factor) {
  const Tensor& av = g.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * av[i];
  Graph::BackwardFn fn;
  if (g.recording()) {
    fn = [a, factor](const Tensor& go, GradientMap& grads) {
      Tensor& ga = grads.slot(a, go.shape());
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += factor * go[i];
    };
  }
  return g.record(std::move(out), {a}, std::move(fn), "scale");
}

}  // namespace petal
