// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "petal/autodiff.hpp"
#include "petal/checkpoint.hpp"
#include "petal/flat_params.hpp"
#include "petal/tensor.hpp"

namespace petal {

struct DenseLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

struct BatchNormLayer {
  Tensor gamma;
  Tensor beta;
  RunningStats stats;
};

/// Batch-normalised MLP: (linear -> BN -> ReLU) per hidden layer, then a
/// linear head. Trainables are registered as fc<i>.weight, fc<i>.bias,
/// bn<i>.weight, bn<i>.bias in layer order; BN running statistics are
/// buffers (bn<i>.running_mean / bn<i>.running_var) and never trainable.
class MlpClassifier {
 public:
  MlpClassifier() = default;

  /// Fan-in scaled uniform initialisation, BN gamma = 1 and beta = 0.
  static MlpClassifier init(std::uint64_t seed, const std::vector<std::size_t>& sizes);
  /// Same architecture with every trainable and buffer zeroed except BN
  /// running variances (1); used when loading from a checkpoint.
  static MlpClassifier blank(const std::vector<std::size_t>& sizes);

  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::size_t input_size() const { return sizes_.front(); }
  std::size_t num_classes() const { return sizes_.back(); }
  std::size_t num_hidden() const { return norms_.size(); }

  std::vector<std::string> param_names() const;
  std::vector<std::string> buffer_names() const;
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  Tensor& buffer(const std::string& name);
  const Tensor& buffer(const std::string& name) const;

  std::vector<DenseLayer>& dense() { return dense_; }
  const std::vector<DenseLayer>& dense() const { return dense_; }
  std::vector<BatchNormLayer>& norms() { return norms_; }
  const std::vector<BatchNormLayer>& norms() const { return norms_; }

  /// Copies BN running statistics from `other` (same architecture).
  void copy_buffers_from(const MlpClassifier& other);

  friend bool operator==(const MlpClassifier& a, const MlpClassifier& b);

 private:
  std::vector<std::size_t> sizes_;
  std::vector<DenseLayer> dense_;
  std::vector<BatchNormLayer> norms_;
};

/// Output of a recorded forward pass. `params` holds one leaf per trainable in
/// registry order.
struct TapedForward {
  Var logits;
  std::vector<Var> params;
};

TapedForward forward_taped(MlpClassifier& model, Graph& g, const Tensor& x, BnMode mode,
                           double bn_momentum = kBatchNormMomentum);

/// Untaped forward. kTrain updates running statistics.
Tensor forward(MlpClassifier& model, const Tensor& x, BnMode mode,
               double bn_momentum = kBatchNormMomentum);

/// Pure forward; `mode` must be kBatch or kEval.
Tensor predict_logits(const MlpClassifier& model, const Tensor& x, BnMode mode);
Tensor predict_proba(const MlpClassifier& model, const Tensor& x, BnMode mode);

FlatParams flatten(const MlpClassifier& model);
void load(MlpClassifier& model, const FlatParams& params);
/// Collects the gradient of every trainable leaf of `fwd` into registry order.
FlatParams gather_gradients(const MlpClassifier& model, const TapedForward& fwd,
                            const GradientMap& grads);

/// Predicate over parameter names selecting a subset of the flat index space.
struct ParamFilter {
  std::string label;
  std::function<bool(const std::string&)> accepts;

  static ParamFilter all_trainable();
  /// BN gamma/beta only.
  static ParamFilter bn_affine();

  std::vector<std::size_t> select(const FlatParams& layout) const;
};

NamedTensors model_entries(const MlpClassifier& model);
MlpClassifier model_from_entries(const NamedTensors& entries);
void save_model(const std::filesystem::path& path, const MlpClassifier& model);
MlpClassifier load_model(const std::filesystem::path& path);

}  // namespace petal
