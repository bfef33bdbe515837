// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "deeptrf/tensor.hpp"

namespace deeptrf {

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-4;
  // Differences below this are treated as finite-difference round-off.
  double abs_tol = 1e-8;
  // Entries probed per tensor; the largest-gradient entry is always included.
  std::size_t max_entries = std::numeric_limits<std::size_t>::max();
  std::uint64_t seed = 0;
  // Entries whose +-step probes switch a ReLU or max-pool branch are not
  // compared: the central difference there straddles a kink.
  bool skip_branch_switches = false;
};

struct GradCheckTensorResult {
  std::string name;
  std::size_t checked = 0;
  std::size_t failures = 0;
  std::size_t branch_switches = 0;  // probed but not compared
  std::size_t compared() const { return checked - branch_switches; }
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed() const { return failures == 0; }
};

struct GradCheckResult {
  std::vector<GradCheckTensorResult> tensors;
  bool passed() const;
};

// Relative error between an analytic and a numeric derivative.
double relative_error(double analytic, double numeric);

// Compares backward() against central differences for each named leaf tensor.
// loss_fn must rebuild the graph from the current leaf values on every call.
GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn,
                                const std::vector<std::pair<std::string, Tensor>>& leaves,
                                const GradCheckOptions& options = {});

}  // namespace deeptrf
