// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include "deeptrf/params.hpp"

#include <cmath>

#include "deeptrf/errors.hpp"
#include "deeptrf/rng.hpp"

namespace deeptrf {

std::size_t count_parameters(const ParamSpecs& specs) {
  std::size_t n = 0;
  for (const auto& s : specs) n += shape_numel(s.shape);
  return n;
}

ParameterStore::ParameterStore(const ParamSpecs& specs, std::uint64_t seed) {
  for (const auto& spec : specs) {
    std::vector<double> values(shape_numel(spec.shape), 0.0);
    switch (spec.init) {
      case Init::Zeros:
        break;
      case Init::Ones:
        std::fill(values.begin(), values.end(), 1.0);
        break;
      case Init::FanInUniform: {
        if (spec.fan_in == 0) throw ConfigError("parameter " + spec.name + " needs a fan-in");
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        Rng rng = Rng::derive(seed, spec.name);
        for (auto& v : values) v = rng.uniform(-bound, bound);
        break;
      }
    }
    if (!index_.emplace(spec.name, items_.size()).second) throw ConfigError("duplicate parameter " + spec.name);
    items_.emplace_back(spec.name, Tensor::from(spec.shape, std::move(values), true));
  }
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return items_[it->second].second;
}

std::size_t ParameterStore::count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : items_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : items_) t.zero_grad();
}

double ParameterStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& [_, t] : items_) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

void ParameterStore::export_to(TensorArchive& archive, const std::string& prefix) const {
  for (const auto& [name, t] : items_) archive[prefix + name] = to_named(t);
}

void ParameterStore::import_from(const TensorArchive& archive, const std::string& prefix) {
  for (auto& [name, t] : items_) {
    auto it = archive.find(prefix + name);
    if (it == archive.end()) throw ConfigError("checkpoint lacks parameter " + name);
    if (it->second.shape != t.shape()) {
      throw ConfigError("checkpoint shape " + shape_str(it->second.shape) + " for " + name + " differs from model " +
                        shape_str(t.shape()));
    }
    std::copy(it->second.data.begin(), it->second.data.end(), t.mutable_data().begin());
  }
}

}  // namespace deeptrf
