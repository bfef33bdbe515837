// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include "deeptrf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deeptrf/ops.hpp"
#include "deeptrf/rng.hpp"

namespace deeptrf {

bool GradCheckResult::passed() const {
  return std::all_of(tensors.begin(), tensors.end(), [](const auto& t) { return t.passed(); });
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max(std::abs(analytic), std::abs(numeric));
  return denom == 0.0 ? 0.0 : std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn,
                                const std::vector<std::pair<std::string, Tensor>>& leaves,
                                const GradCheckOptions& options) {
  for (const auto& [name, t] : leaves) {
    Tensor(t).zero_grad();
    Tensor(t).set_requires_grad(true);
  }
  // Loss value plus the branch fingerprint of the evaluation.
  const auto probe = [&] {
    BranchRecorder recorder;
    Tensor loss = loss_fn();
    return std::pair{loss, recorder.fingerprint()};
  };
  const auto [base_loss, base_branches] = probe();
  base_loss.backward();

  GradCheckResult result;
  Rng rng(options.seed);
  for (const auto& [name, leaf] : leaves) {
    Tensor t = leaf;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> idx(t.numel());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > options.max_entries) {
      const auto largest = static_cast<std::size_t>(
          std::max_element(analytic.begin(), analytic.end(),
                           [](double a, double b) { return std::abs(a) < std::abs(b); }) -
          analytic.begin());
      std::shuffle(idx.begin(), idx.end(), rng.engine());
      idx.resize(options.max_entries);
      if (std::find(idx.begin(), idx.end(), largest) == idx.end()) idx.back() = largest;
    }

    GradCheckTensorResult tr{.name = name};
    auto values = t.mutable_data();
    for (std::size_t i : idx) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const auto [up, up_branches] = probe();
      values[i] = saved - options.step;
      const auto [down, down_branches] = probe();
      values[i] = saved;
      ++tr.checked;
      if (options.skip_branch_switches && (up_branches != base_branches || down_branches != base_branches)) {
        ++tr.branch_switches;
        continue;
      }
      const double numeric = (up.item() - down.item()) / (2.0 * options.step);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double rel = relative_error(analytic[i], numeric);
      tr.max_abs_error = std::max(tr.max_abs_error, abs_err);
      if (abs_err > options.abs_tol) tr.max_rel_error = std::max(tr.max_rel_error, rel);
      if (rel > options.rel_tol && abs_err > options.abs_tol) ++tr.failures;
    }
    result.tensors.push_back(std::move(tr));
  }
  return result;
}

}  // namespace deeptrf
