// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#include "petal/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace petal {
namespace {

void validate_sizes(const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 3) throw std::invalid_argument("MLP needs input, at least one hidden layer, and classes");
  for (auto s : sizes) {
    if (s == 0) throw std::invalid_argument("MLP layer sizes must be positive");
  }
  if (sizes.back() < 2) throw std::invalid_argument("MLP needs at least 2 classes");
}

struct NameRef {
  bool dense = false;
  std::size_t layer = 0;
  std::string field;
};

NameRef parse_name(const std::string& name) {
  const auto dot = name.find('.');
  if (dot == std::string::npos || dot < 3) throw std::out_of_range("bad parameter name " + name);
  NameRef ref;
  const std::string prefix = name.substr(0, 2);
  if (prefix == "fc") {
    ref.dense = true;
  } else if (prefix != "bn") {
    throw std::out_of_range("bad parameter name " + name);
  }
  ref.layer = std::stoul(name.substr(2, dot - 2));
  ref.field = name.substr(dot + 1);
  return ref;
}

}  // namespace

MlpClassifier MlpClassifier::blank(const std::vector<std::size_t>& sizes) {
  validate_sizes(sizes);
  MlpClassifier m;
  m.sizes_ = sizes;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    m.dense_.push_back({Tensor(Shape{sizes[l], sizes[l + 1]}), Tensor(Shape{sizes[l + 1]})});
    if (l + 2 < sizes.size()) {
      m.norms_.push_back({Tensor(Shape{sizes[l + 1]}), Tensor(Shape{sizes[l + 1]}), RunningStats(sizes[l + 1])});
    }
  }
  return m;
}

MlpClassifier MlpClassifier::init(std::uint64_t seed, const std::vector<std::size_t>& sizes) {
  MlpClassifier m = blank(sizes);
  std::mt19937_64 rng(seed);
  for (auto& layer : m.dense_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.rows()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : layer.weight.data()) w = dist(rng);
    for (auto& b : layer.bias.data()) b = dist(rng);
  }
  for (auto& bn : m.norms_) {
    for (auto& g : bn.gamma.data()) g = 1.0;
  }
  return m;
}

std::vector<std::string> MlpClassifier::param_names() const {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < dense_.size(); ++l) {
    names.push_back("fc" + std::to_string(l) + ".weight");
    names.push_back("fc" + std::to_string(l) + ".bias");
    if (l < norms_.size()) {
      names.push_back("bn" + std::to_string(l) + ".weight");
      names.push_back("bn" + std::to_string(l) + ".bias");
    }
  }
  return names;
}

std::vector<std::string> MlpClassifier::buffer_names() const {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < norms_.size(); ++l) {
    names.push_back("bn" + std::to_string(l) + ".running_mean");
    names.push_back("bn" + std::to_string(l) + ".running_var");
  }
  return names;
}

Tensor& MlpClassifier::param(const std::string& name) {
  const auto ref = parse_name(name);
  if (ref.dense && ref.layer < dense_.size()) {
    if (ref.field == "weight") return dense_[ref.layer].weight;
    if (ref.field == "bias") return dense_[ref.layer].bias;
  } else if (!ref.dense && ref.layer < norms_.size()) {
    if (ref.field == "weight") return norms_[ref.layer].gamma;
    if (ref.field == "bias") return norms_[ref.layer].beta;
  }
  throw std::out_of_range("unknown parameter " + name);
}

const Tensor& MlpClassifier::param(const std::string& name) const {
  return const_cast<MlpClassifier*>(this)->param(name);
}

Tensor& MlpClassifier::buffer(const std::string& name) {
  const auto ref = parse_name(name);
  if (!ref.dense && ref.layer < norms_.size()) {
    if (ref.field == "running_mean") return norms_[ref.layer].stats.mean;
    if (ref.field == "running_var") return norms_[ref.layer].stats.var;
  }
  throw std::out_of_range("unknown buffer " + name);
}

const Tensor& MlpClassifier::buffer(const std::string& name) const {
  return const_cast<MlpClassifier*>(this)->buffer(name);
}

void MlpClassifier::copy_buffers_from(const MlpClassifier& other) {
  if (other.sizes_ != sizes_) throw std::invalid_argument("copy_buffers_from: architecture mismatch");
  for (std::size_t l = 0; l < norms_.size(); ++l) norms_[l].stats = other.norms_[l].stats;
}

bool operator==(const MlpClassifier& a, const MlpClassifier& b) {
  if (a.sizes_ != b.sizes_) return false;
  for (std::size_t l = 0; l < a.dense_.size(); ++l) {
    if (a.dense_[l].weight != b.dense_[l].weight || a.dense_[l].bias != b.dense_[l].bias) return false;
  }
  for (std::size_t l = 0; l < a.norms_.size(); ++l) {
    const auto& x = a.norms_[l];
    const auto& y = b.norms_[l];
    if (x.gamma != y.gamma || x.beta != y.beta || x.stats.mean != y.stats.mean || x.stats.var != y.stats.var) {
      return false;
    }
  }
  return true;
}

TapedForward forward_taped(MlpClassifier& model, Graph& g, const Tensor& x, BnMode mode,
                           double bn_momentum) {
  if (x.rank() != 2 || x.cols() != model.input_size()) {
    throw std::invalid_argument("forward: expected input [B x " + std::to_string(model.input_size()) +
                                "], got " + shape_string(x.shape()));
  }
  TapedForward out;
  Var h = g.constant(x);
  auto& dense = model.dense();
  auto& norms = model.norms();
  for (std::size_t l = 0; l < dense.size(); ++l) {
    const Var w = g.leaf(dense[l].weight);
    const Var b = g.leaf(dense[l].bias);
    out.params.push_back(w);
    out.params.push_back(b);
    h = linear(g, h, w, b);
    if (l < norms.size()) {
      const Var gamma = g.leaf(norms[l].gamma);
      const Var beta = g.leaf(norms[l].beta);
      out.params.push_back(gamma);
      out.params.push_back(beta);
      h = batch_norm(g, h, gamma, beta, norms[l].stats, mode, bn_momentum);
      h = relu(g, h);
    }
  }
  out.logits = h;
  return out;
}

Tensor forward(MlpClassifier& model, const Tensor& x, BnMode mode, double bn_momentum) {
  Graph g(Graph::Mode::kNoGrad);
  const auto fwd = forward_taped(model, g, x, mode, bn_momentum);
  return g.value(fwd.logits);
}

Tensor predict_logits(const MlpClassifier& model, const Tensor& x, BnMode mode) {
  if (mode == BnMode::kTrain) throw std::invalid_argument("predict_logits is pure; use kBatch or kEval");
  // kBatch and kEval never write the running statistics.
  return forward(const_cast<MlpClassifier&>(model), x, mode);
}

Tensor predict_proba(const MlpClassifier& model, const Tensor& x, BnMode mode) {
  return softmax_rows(predict_logits(model, x, mode));
}

FlatParams flatten(const MlpClassifier& model) {
  std::vector<std::pair<std::string, Shape>> entries;
  for (const auto& name : model.param_names()) entries.emplace_back(name, model.param(name).shape());
  FlatParams out(entries);
  for (const auto& spec : out.layout()) {
    const auto& t = model.param(spec.name);
    std::copy(t.data().begin(), t.data().end(), out.values().begin() + static_cast<std::ptrdiff_t>(spec.offset));
  }
  return out;
}

void load(MlpClassifier& model, const FlatParams& params) {
  const auto names = model.param_names();
  const auto& layout = params.layout();
  if (layout.size() != names.size()) throw std::invalid_argument("load: parameter registry mismatch");
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (layout[i].name != names[i] || layout[i].shape != model.param(names[i]).shape()) {
      throw std::invalid_argument("load: registry mismatch at " + layout[i].name);
    }
  }
  for (const auto& spec : layout) {
    auto src = params.block(spec.name);
    auto& dst = model.param(spec.name);
    std::copy(src.begin(), src.end(), dst.data().begin());
  }
}

FlatParams gather_gradients(const MlpClassifier& model, const TapedForward& fwd, const GradientMap& grads) {
  FlatParams out = flatten(model).zeros_like();
  const auto& layout = out.layout();
  if (layout.size() != fwd.params.size()) throw std::invalid_argument("gather_gradients: leaf count mismatch");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const Tensor& g = grads[fwd.params[i]];
    std::copy(g.data().begin(), g.data().end(), out.values().begin() + static_cast<std::ptrdiff_t>(layout[i].offset));
  }
  return out;
}

ParamFilter ParamFilter::all_trainable() {
  return {"all", [](const std::string&) { return true; }};
}

ParamFilter ParamFilter::bn_affine() {
  return {"bn_affine", [](const std::string& name) { return name.rfind("bn", 0) == 0; }};
}

std::vector<std::size_t> ParamFilter::select(const FlatParams& layout) const {
  std::vector<std::size_t> idx;
  for (const auto& spec : layout.layout()) {
    if (!accepts(spec.name)) continue;
    for (std::size_t k = 0; k < spec.size(); ++k) idx.push_back(spec.offset + k);
  }
  return idx;
}

NamedTensors model_entries(const MlpClassifier& model) {
  NamedTensors entries;
  for (const auto& name : model.param_names()) entries.emplace_back(name, model.param(name));
  for (const auto& name : model.buffer_names()) entries.emplace_back(name, model.buffer(name));
  return entries;
}

MlpClassifier model_from_entries(const NamedTensors& entries) {
  std::vector<std::size_t> sizes;
  for (std::size_t l = 0;; ++l) {
    const std::string name = "fc" + std::to_string(l) + ".weight";
    const Tensor* w = nullptr;
    for (const auto& [n, t] : entries) {
      if (n == name) w = &t;
    }
    if (w == nullptr) break;
    if (w->rank() != 2) throw std::runtime_error("checkpoint: " + name + " is not a matrix");
    if (sizes.empty()) sizes.push_back(w->rows());
    if (sizes.back() != w->rows()) throw std::runtime_error("checkpoint: inconsistent layer sizes at " + name);
    sizes.push_back(w->cols());
  }
  MlpClassifier m = MlpClassifier::blank(sizes);
  for (const auto& name : m.param_names()) {
    const Tensor& t = find_entry(entries, name);
    if (t.shape() != m.param(name).shape()) throw std::runtime_error("checkpoint: shape mismatch for " + name);
    m.param(name) = t;
  }
  for (const auto& name : m.buffer_names()) {
    const Tensor& t = find_entry(entries, name);
    if (t.shape() != m.buffer(name).shape()) throw std::runtime_error("checkpoint: shape mismatch for " + name);
    m.buffer(name) = t;
  }
  return m;
}

void save_model(const std::filesystem::path& path, const MlpClassifier& model) {
  write_checkpoint(path, model_entries(model));
}

MlpClassifier load_model(const std::filesystem::path& path) { return model_from_entries(read_checkpoint(path)); }

}  // namespace petal
