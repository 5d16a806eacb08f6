// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "petal/tensor.hpp"

namespace petal {

/// Handle to a node recorded on a Graph.
struct Var {
  std::size_t id = 0;
  friend bool operator==(Var, Var) = default;
};

class Graph;

/// Gradients keyed by node. After Graph::backward every node of the graph has
/// an entry with the same shape as its value (zero when unreachable).
class GradientMap {
 public:
  explicit GradientMap(std::size_t nodes = 0) : grads_(nodes) {}

  bool has(Var v) const { return v.id < grads_.size() && grads_[v.id].has_value(); }
  const Tensor& operator[](Var v) const;
  std::size_t size() const { return grads_.size(); }

  /// Zero-initialised accumulation slot for `v`.
  Tensor& slot(Var v, const Shape& shape);

 private:
  friend class Graph;
  std::vector<std::optional<Tensor>> grads_;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the id order
/// is a topological order and backward walks it in reverse. A graph built in
/// kNoGrad mode stores values only and refuses backward().
class Graph {
 public:
  enum class Mode { kRecord, kNoGrad };
  using BackwardFn = std::function<void(const Tensor& grad_out, GradientMap& grads)>;

  explicit Graph(Mode mode = Mode::kRecord) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return mode_ == Mode::kRecord; }
  std::size_t size() const { return nodes_.size(); }

  Var leaf(Tensor value);
  Var constant(Tensor value);
  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const std::vector<Var>& inputs(Var v) const { return nodes_.at(v.id).inputs; }
  const std::string& op(Var v) const { return nodes_.at(v.id).op; }

  /// Appends an op result. `value` is checked for finiteness.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op);

  /// Gradients of a rank-0 root with respect to every node.
  GradientMap backward(Var root) const;

 private:
  struct Node {
    Tensor value;
    std::vector<Var> inputs;
    BackwardFn backward;
    std::string op;
  };
  Mode mode_;
  std::vector<Node> nodes_;
};

/// Batch-norm running statistics.
struct RunningStats {
  Tensor mean;
  Tensor var;
  explicit RunningStats(std::size_t features = 1)
      : mean(Shape{features}, 0.0), var(Shape{features}, 1.0) {}
};

/// kTrain normalises by batch statistics and updates the running stats;
/// kBatch normalises by batch statistics and leaves them alone;
/// kEval normalises by the running stats.
enum class BnMode { kTrain, kBatch, kEval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Differentiable ops. Each records onto `g` when it is recording.

Var linear(Graph& g, Var x, Var weight, Var bias);
Var relu(Graph& g, Var x);
/// `momentum` weights the new batch statistic in the running average.
Var batch_norm(Graph& g, Var x, Var gamma, Var beta, RunningStats& stats, BnMode mode,
               double momentum = kBatchNormMomentum);
Var softmax(Graph& g, Var logits);
/// Mean over rows of -sum_c target[c] * log softmax(logits)[c].
Var soft_cross_entropy(Graph& g, const Tensor& target, Var logits);
/// Mean over rows of the entropy of softmax(logits).
Var softmax_entropy(Graph& g, Var logits);
/// sum_i -(x_i - mu_i)^2 / (2 sigma2_i) - log(2 pi sigma2_i) / 2.
Var diag_gaussian_log_density(Graph& g, Var x, const Tensor& mu, const Tensor& sigma2);
Var sum(Graph& g, Var x);
Var add(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double factor);

/// Throws unless every row of `target` is a distribution (entries >= 0, sum 1 +- 1e-6).
void require_distribution_rows(const Tensor& target, const char* where);

}  // namespace petal
