// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include "deeptrf/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "deeptrf/errors.hpp"

namespace deeptrf {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

void require_matrix(const EmissionMatrix& em) {
  if (em.rank() != 2) throw DimensionError("decoder expects [frames, symbols], got " + shape_str(em.shape()));
}

}  // namespace

Hypothesis greedy_decode(const EmissionMatrix& emissions, Label blank) {
  require_matrix(emissions);
  const std::size_t T = emissions.dim(0), V = emissions.dim(1);
  const auto lp = emissions.data();
  Hypothesis hyp;
  Label previous = blank;
  for (std::size_t t = 0; t < T; ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < V; ++k) {
      if (lp[t * V + k] > lp[t * V + best]) best = k;
    }
    hyp.log_score += lp[t * V + best];
    const auto label = static_cast<Label>(best);
    if (label != blank && label != previous) {
      hyp.labels.push_back(label);
      hyp.times.push_back(t);
    }
    previous = label;
  }
  return hyp;
}

std::vector<Hypothesis> prefix_beam_decode(const EmissionMatrix& emissions, std::size_t beam, Label blank,
                                           const PrefixScorer& scorer) {
  require_matrix(emissions);
  if (beam < 1) throw ConfigError("beam width must be at least 1");
  const std::size_t T = emissions.dim(0), V = emissions.dim(1);
  const auto lp = emissions.data();

  struct Scores {
    double blank = kNegInf;
    double non_blank = kNegInf;
    double total() const { return log_add(blank, non_blank); }
  };
  using Prefix = std::vector<Label>;
  std::map<Prefix, Scores> beams{{Prefix{}, Scores{0.0, kNegInf}}};

  for (std::size_t t = 0; t < T; ++t) {
    std::map<Prefix, Scores> next;
    const double* row = lp.data() + t * V;
    for (const auto& [prefix, sc] : beams) {
      auto& stay = next[prefix];
      stay.blank = log_add(stay.blank, sc.total() + row[blank]);
      for (std::size_t k = 0; k < V; ++k) {
        const auto c = static_cast<Label>(k);
        if (c == blank) continue;
        const double extra = scorer ? scorer(prefix, c) : 0.0;
        if (!prefix.empty() && prefix.back() == c) {
          // Repeat without a blank collapses into the same prefix.
          auto& same = next[prefix];
          same.non_blank = log_add(same.non_blank, sc.non_blank + row[k]);
          Prefix extended = prefix;
          extended.push_back(c);
          auto& ext = next[extended];
          ext.non_blank = log_add(ext.non_blank, sc.blank + row[k] + extra);
        } else {
          Prefix extended = prefix;
          extended.push_back(c);
          auto& ext = next[extended];
          ext.non_blank = log_add(ext.non_blank, sc.total() + row[k] + extra);
        }
      }
    }
    std::vector<std::pair<Prefix, Scores>> ranked(next.begin(), next.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second.total() > b.second.total(); });
    if (ranked.size() > beam) ranked.resize(beam);
    beams = std::map<Prefix, Scores>(ranked.begin(), ranked.end());
  }

  std::vector<Hypothesis> out;
  for (const auto& [prefix, sc] : beams) out.push_back({prefix, sc.total(), {}});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.log_score > b.log_score; });
  return out;
}

std::size_t edit_distance(std::span<const Label> a, std::span<const Label> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

ErrorRate error_rate(std::span<const Label> hypothesis, std::span<const Label> reference) {
  ErrorRate r;
  r.errors = edit_distance(hypothesis, reference);
  r.reference_length = reference.size();
  r.empty_reference = reference.empty();
  r.rate = static_cast<double>(r.errors) / static_cast<double>(std::max<std::size_t>(reference.size(), 1));
  return r;
}

}  // namespace deeptrf
