// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#include "petal/flat_params.hpp"

#include <stdexcept>

namespace petal {

FlatParams::FlatParams(const std::vector<std::pair<std::string, Shape>>& entries) {
  std::size_t offset = 0;
  for (const auto& [name, shape] : entries) {
    for (const auto& spec : layout_) {
      if (spec.name == name) throw std::invalid_argument("duplicate parameter name " + name);
    }
    layout_.push_back(ParamSpec{name, shape, offset});
    offset += shape_numel(shape);
  }
  values_.assign(offset, 0.0);
}

FlatParams FlatParams::from_values(std::vector<double> values) {
  FlatParams out({{"theta", Shape{values.size()}}});
  out.values_ = std::move(values);
  return out;
}

std::vector<std::string> FlatParams::names() const {
  std::vector<std::string> out;
  out.reserve(layout_.size());
  for (const auto& spec : layout_) out.push_back(spec.name);
  return out;
}

const ParamSpec& FlatParams::spec(const std::string& name) const {
  for (const auto& spec : layout_) {
    if (spec.name == name) return spec;
  }
  throw std::out_of_range("unknown parameter " + name);
}

std::span<double> FlatParams::block(const std::string& name) {
  const auto& s = spec(name);
  return std::span<double>(values_).subspan(s.offset, s.size());
}

std::span<const double> FlatParams::block(const std::string& name) const {
  const auto& s = spec(name);
  return std::span<const double>(values_).subspan(s.offset, s.size());
}

Tensor FlatParams::tensor(const std::string& name) const {
  const auto& s = spec(name);
  auto b = block(name);
  return Tensor(s.shape, std::vector<double>(b.begin(), b.end()));
}

void FlatParams::require_same_layout(const FlatParams& other, const char* what) const {
  if (!same_layout(other)) {
    throw std::invalid_argument(std::string(what) + ": parameter layout mismatch (" +
                                std::to_string(size()) + " vs " + std::to_string(other.size()) +
                                " entries)");
  }
}

FlatParams FlatParams::zeros_like() const {
  FlatParams out;
  out.layout_ = layout_;
  out.values_.assign(values_.size(), 0.0);
  return out;
}

FlatParams finite_diff_gradient(const std::function<double(const FlatParams&)>& f,
                                const FlatParams& params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  FlatParams grad = params.zeros_like();
  FlatParams probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double x = params[i];
    probe[i] = x + h;
    const double up = f(probe);
    probe[i] = x - h;
    const double down = f(probe);
    probe[i] = x;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace petal
