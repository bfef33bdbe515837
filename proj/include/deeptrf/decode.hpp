// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "deeptrf/heads_loss.hpp"

namespace deeptrf {

struct Hypothesis {
  std::vector<Label> labels;
  double log_score = 0.0;
  std::vector<std::size_t> times;  // first frame of each label, when known
};

// Frame-wise argmax (lowest index wins ties), merge repeats, drop blanks.
// log_score is the log-probability of the argmax path.
Hypothesis greedy_decode(const EmissionMatrix& emissions, Label blank = 0);

// Optional extra log-score for extending `prefix` with `next` (e.g. an LM).
using PrefixScorer = std::function<double(std::span<const Label> prefix, Label next)>;

// CTC prefix beam search. Returns up to `beam` hypotheses ranked by total
// prefix log-probability, best first.
std::vector<Hypothesis> prefix_beam_decode(const EmissionMatrix& emissions, std::size_t beam, Label blank = 0,
                                           const PrefixScorer& scorer = {});

std::size_t edit_distance(std::span<const Label> a, std::span<const Label> b);

struct ErrorRate {
  std::size_t errors = 0;
  std::size_t reference_length = 0;
  double rate = 0.0;
  // Set when the reference is empty; rate is then errors / 1.
  bool empty_reference = false;
};

ErrorRate error_rate(std::span<const Label> hypothesis, std::span<const Label> reference);

}  // namespace deeptrf
