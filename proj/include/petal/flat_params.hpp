// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "petal/tensor.hpp"

namespace petal {

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t size() const { return shape_numel(shape); }
  friend bool operator==(const ParamSpec&, const ParamSpec&) = default;
};

/// Ordered, named, flattened parameter vector. Holds student/teacher/source
/// parameters, gradients, Fisher diagonals and restore masks alike.
class FlatParams {
 public:
  FlatParams() = default;
  /// Zero-filled vector laid out by `(name, shape)` pairs in order.
  explicit FlatParams(const std::vector<std::pair<std::string, Shape>>& entries);
  /// Single anonymous block named "theta".
  static FlatParams from_values(std::vector<double> values);

  const std::vector<ParamSpec>& layout() const { return layout_; }
  std::vector<std::string> names() const;
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  const ParamSpec& spec(const std::string& name) const;
  std::span<double> block(const std::string& name);
  std::span<const double> block(const std::string& name) const;
  Tensor tensor(const std::string& name) const;

  bool same_layout(const FlatParams& other) const { return layout_ == other.layout_; }
  /// Throws std::invalid_argument naming `what` unless layouts agree.
  void require_same_layout(const FlatParams& other, const char* what) const;
  FlatParams zeros_like() const;

  friend bool operator==(const FlatParams&, const FlatParams&) = default;

 private:
  std::vector<ParamSpec> layout_;
  std::vector<double> values_;
};

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
FlatParams finite_diff_gradient(const std::function<double(const FlatParams&)>& f,
                                const FlatParams& params, double h);

}  // namespace petal
