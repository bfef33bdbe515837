// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "deeptrf/checkpoint.hpp"
#include "deeptrf/tensor.hpp"

namespace deeptrf {

enum class Init { FanInUniform, Zeros, Ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::FanInUniform;
  std::size_t fan_in = 0;
};

using ParamSpecs = std::vector<ParamSpec>;

std::size_t count_parameters(const ParamSpecs& specs);

// Named trainable leaves, in declaration order. Each tensor is initialized
// from a stream derived from (seed, name), so a parameter's initial value does
// not depend on which other parameters exist.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParamSpecs& specs, std::uint64_t seed);

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t count() const;

  void zero_grad();
  double grad_norm() const;

  // Entries keyed as prefix + name.
  void export_to(TensorArchive& archive, const std::string& prefix) const;
  // Every parameter must be present with a matching shape.
  void import_from(const TensorArchive& archive, const std::string& prefix);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace deeptrf
