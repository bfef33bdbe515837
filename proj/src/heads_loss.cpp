// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include "deeptrf/heads_loss.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "deeptrf/errors.hpp"
#include "deeptrf/ops.hpp"

namespace deeptrf {

using detail::Node;

void AuxHead::declare(ParamSpecs& specs, const std::string& prefix, const AuxHeadConfig& c) {
  specs.push_back({prefix + "fc1.weight", {c.model_dim, c.hidden_dim}, Init::FanInUniform, c.model_dim});
  specs.push_back({prefix + "fc1.bias", {c.hidden_dim}, Init::Zeros});
  specs.push_back({prefix + "fc2.weight", {c.hidden_dim, c.output_dim}, Init::FanInUniform, c.hidden_dim});
  specs.push_back({prefix + "fc2.bias", {c.output_dim}, Init::Zeros});
}

AuxHead::AuxHead(const ParameterStore& p, const std::string& prefix, const AuxHeadConfig& config)
    : config_(config),
      w1_(p.get(prefix + "fc1.weight")),
      b1_(p.get(prefix + "fc1.bias")),
      w2_(p.get(prefix + "fc2.weight")),
      b2_(p.get(prefix + "fc2.bias")) {}

EmissionMatrix AuxHead::forward(const Tensor& activations) const {
  const Tensor hidden = leaky_relu(linear(activations, w1_, b1_), config_.leaky_slope);
  return log_softmax(linear(hidden, w2_, b2_), 1);
}

void OutputHead::declare(ParamSpecs& specs, const std::string& prefix, std::size_t model_dim, std::size_t output_dim) {
  specs.push_back({prefix + "weight", {model_dim, output_dim}, Init::FanInUniform, model_dim});
  specs.push_back({prefix + "bias", {output_dim}, Init::Zeros});
}

OutputHead::OutputHead(const ParameterStore& p, const std::string& prefix)
    : w_(p.get(prefix + "weight")), b_(p.get(prefix + "bias")) {}

EmissionMatrix OutputHead::forward(const Tensor& activations) const {
  return log_softmax(linear(activations, w_, b_), 1);
}

std::size_t ctc_min_frames(std::span<const Label> labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) n += labels[i] == labels[i - 1] ? 1 : 0;
  return n;
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace

Tensor ctc_loss(const EmissionMatrix& log_probs, std::span<const Label> labels, Label blank) {
  if (log_probs.rank() != 2) throw DimensionError("ctc_loss expects [frames, symbols], got " + shape_str(log_probs.shape()));
  const std::size_t T = log_probs.dim(0), V = log_probs.dim(1);
  if (blank < 0 || static_cast<std::size_t>(blank) >= V) throw ConfigError("blank index outside the vocabulary");
  for (Label l : labels) {
    if (l == blank || l < 0 || static_cast<std::size_t>(l) >= V) {
      throw InputError("CTC label " + std::to_string(l) + " is blank or outside the vocabulary");
    }
  }
  if (T < ctc_min_frames(labels)) {
    throw InfeasibleAlignment(std::to_string(labels.size()) + " labels need at least " +
                              std::to_string(ctc_min_frames(labels)) + " frames, got " + std::to_string(T));
  }

  // Extended sequence: blank, l1, blank, l2, ..., blank.
  const std::size_t S = 2 * labels.size() + 1;
  std::vector<Label> ext(S, blank);
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
  auto skip_allowed = [&ext, blank](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  const auto lp = log_probs.data();
  auto emit = [&](std::size_t t, std::size_t s) { return lp[t * V + static_cast<std::size_t>(ext[s])]; };

  std::vector<double> alpha(T * S, kNegInf), beta(T * S, kNegInf);
  alpha[0] = emit(0, 0);
  if (S > 1) alpha[1] = emit(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha[(t - 1) * S + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
      if (skip_allowed(s)) a = log_add(a, alpha[(t - 1) * S + s - 2]);
      alpha[t * S + s] = a == kNegInf ? kNegInf : a + emit(t, s);
    }
  }
  double log_likelihood = alpha[(T - 1) * S + S - 1];
  if (S > 1) log_likelihood = log_add(log_likelihood, alpha[(T - 1) * S + S - 2]);

  // beta excludes the emission at its own frame.
  beta[(T - 1) * S + S - 1] = 0.0;
  if (S > 1) beta[(T - 1) * S + S - 2] = 0.0;
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta[(t + 1) * S + s] + emit(t + 1, s);
      if (s + 1 < S) b = log_add(b, beta[(t + 1) * S + s + 1] + emit(t + 1, s + 1));
      if (s + 2 < S && skip_allowed(s + 2)) b = log_add(b, beta[(t + 1) * S + s + 2] + emit(t + 1, s + 2));
      beta[t * S + s] = b;
    }
  }

  // d(-log P)/d log y[t,k] = -sum_{s: ext[s]=k} alpha_t(s) beta_t(s) / P
  std::vector<double> dlp(T * V, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      const double lg = alpha[t * S + s] + beta[t * S + s];
      if (lg == kNegInf) continue;
      dlp[t * V + static_cast<std::size_t>(ext[s])] -= std::exp(lg - log_likelihood);
    }
  }
  return detail::make_result({1}, {-log_likelihood}, {log_probs}, [dlp = std::move(dlp)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * dlp[i];
  });
}

Tensor ce_frame_loss(const EmissionMatrix& log_probs, std::span<const Label> alignment) {
  if (log_probs.rank() != 2) throw DimensionError("ce_frame_loss expects [frames, states], got " + shape_str(log_probs.shape()));
  const std::size_t T = log_probs.dim(0), V = log_probs.dim(1);
  if (alignment.size() != T) {
    throw InputError("alignment has " + std::to_string(alignment.size()) + " frames, emissions have " + std::to_string(T));
  }
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    if (alignment[t] < 0 || static_cast<std::size_t>(alignment[t]) >= V) {
      throw InputError("alignment target " + std::to_string(alignment[t]) + " outside the state inventory");
    }
    total -= log_probs.data()[t * V + static_cast<std::size_t>(alignment[t])];
  }
  std::vector<std::size_t> targets(alignment.begin(), alignment.end());
  return detail::make_result({1}, {total / static_cast<double>(T)}, {log_probs}, [targets, T, V](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double w = self.grad[0] / static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) g[t * V + targets[t]] -= w;
  });
}

Objective total_objective(const Tensor& final_loss, std::span<const Tensor> aux_losses,
                          std::span<const std::size_t> taps, double lambda) {
  if (lambda < 0.0) throw ConfigError("auxiliary weight must be non-negative");
  if (aux_losses.size() != taps.size()) throw DimensionError("one auxiliary loss per tap required");
  std::vector<Tensor> terms{final_loss};
  std::vector<double> weights{1.0};
  Objective obj;
  obj.report.final_loss = final_loss.item();
  obj.report.taps.assign(taps.begin(), taps.end());
  for (const auto& aux : aux_losses) {
    terms.push_back(aux);
    weights.push_back(lambda);
    obj.report.aux_losses.push_back(aux.item());
  }
  obj.total = weighted_sum(terms, weights);
  obj.report.total = obj.total.item();
  return obj;
}

std::string loss_csv_header(std::span<const std::size_t> taps) {
  std::string header = "step,total,final";
  for (auto k : taps) header += ",aux_" + std::to_string(k);
  return header + ",grad_norm";
}

std::string loss_csv_row(const LossReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << r.step << ',' << r.total << ',' << r.final_loss;
  for (double a : r.aux_losses) out << ',' << a;
  out << ',' << r.grad_norm;
  return out.str();
}

}  // namespace deeptrf
