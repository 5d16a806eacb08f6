// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#include "petal/swag.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace petal {
namespace {

constexpr char kMuPrefix[] = "swag.mu.";
constexpr char kSigmaPrefix[] = "swag.sigma2.";
constexpr char kCountName[] = "swag.count";

}  // namespace

SwagDiagPosterior::SwagDiagPosterior(FlatParams mu, FlatParams sigma2, std::size_t iterates)
    : mu_(std::move(mu)), sigma2_(std::move(sigma2)), iterates_(iterates) {
  mu_.require_same_layout(sigma2_, "SwagDiagPosterior");
  for (std::size_t i = 0; i < sigma2_.size(); ++i) {
    if (!(sigma2_[i] >= kSwagVarianceFloor)) {
      throw std::invalid_argument("SwagDiagPosterior: variance below floor at index " + std::to_string(i));
    }
  }
}

double SwagDiagPosterior::log_density(const FlatParams& theta) const {
  mu_.require_same_layout(theta, "log_density");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double total = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = theta[i] - mu_[i];
    total += -d * d / (2.0 * sigma2_[i]) - 0.5 * std::log(two_pi * sigma2_[i]);
  }
  return total;
}

FlatParams SwagDiagPosterior::grad_log_density(const FlatParams& theta) const {
  mu_.require_same_layout(theta, "grad_log_density");
  FlatParams g = theta.zeros_like();
  for (std::size_t i = 0; i < theta.size(); ++i) g[i] = -(theta[i] - mu_[i]) / sigma2_[i];
  return g;
}

const FlatParams& SwagDiagPosterior::map_params() const {
  if (!fitted()) throw std::logic_error("map_params on an unfitted posterior");
  return mu_;
}

void SwagDiagBuilder::collect(const FlatParams& iterate) {
  if (count_ == 0) {
    mean_ = iterate.zeros_like();
    m2_ = iterate.zeros_like();
  } else {
    mean_.require_same_layout(iterate, "SwagDiagBuilder::collect");
  }
  ++count_;
  const double n = static_cast<double>(count_);
  for (std::size_t i = 0; i < iterate.size(); ++i) {
    const double delta = iterate[i] - mean_[i];
    mean_[i] += delta / n;
    m2_[i] += delta * (iterate[i] - mean_[i]);
  }
}

SwagDiagPosterior SwagDiagBuilder::finalize() const {
  if (count_ == 0) throw std::runtime_error("no iterates collected");
  FlatParams sigma2 = mean_.zeros_like();
  const double n = static_cast<double>(count_);
  for (std::size_t i = 0; i < sigma2.size(); ++i) sigma2[i] = std::max(m2_[i] / n, floor_);
  return SwagDiagPosterior(mean_, std::move(sigma2), count_);
}

NamedTensors posterior_entries(const SwagDiagPosterior& posterior) {
  NamedTensors entries;
  for (const auto& spec : posterior.mu().layout()) {
    entries.emplace_back(kMuPrefix + spec.name, posterior.mu().tensor(spec.name));
  }
  for (const auto& spec : posterior.sigma2().layout()) {
    entries.emplace_back(kSigmaPrefix + spec.name, posterior.sigma2().tensor(spec.name));
  }
  entries.emplace_back(kCountName, Tensor::scalar(static_cast<double>(posterior.iterates())));
  return entries;
}

SwagDiagPosterior posterior_from_entries(const NamedTensors& entries) {
  std::vector<std::pair<std::string, Shape>> layout;
  const std::string mu_prefix = kMuPrefix;
  for (const auto& [name, t] : entries) {
    if (name.rfind(mu_prefix, 0) == 0) layout.emplace_back(name.substr(mu_prefix.size()), t.shape());
  }
  if (layout.empty()) throw std::runtime_error("checkpoint holds no posterior mean");
  FlatParams mu(layout), sigma2(layout);
  for (const auto& [pname, shape] : layout) {
    const Tensor& m = find_entry(entries, kMuPrefix + pname);
    const Tensor& s = find_entry(entries, kSigmaPrefix + pname);
    if (s.shape() != shape) throw std::runtime_error("posterior variance shape mismatch for " + pname);
    std::copy(m.data().begin(), m.data().end(), mu.block(pname).begin());
    std::copy(s.data().begin(), s.data().end(), sigma2.block(pname).begin());
  }
  const double count = find_entry(entries, kCountName).item();
  if (!(count >= 1.0)) throw std::runtime_error("posterior checkpoint has no iterates");
  return SwagDiagPosterior(std::move(mu), std::move(sigma2), static_cast<std::size_t>(count));
}

void save_posterior(const std::filesystem::path& path, const SwagDiagPosterior& posterior) {
  write_checkpoint(path, posterior_entries(posterior));
}

SwagDiagPosterior load_posterior(const std::filesystem::path& path) {
  return posterior_from_entries(read_checkpoint(path));
}

}  // namespace petal
