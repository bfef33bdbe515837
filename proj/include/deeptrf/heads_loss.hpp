// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Prediction heads, sequence and frame losses, and the weighted objective
//   L = Loss(P_M, Y) + lambda * sum_l Loss(P_{k_l}, Y).

#pragma once

#include <span>
#include <string>
#include <vector>

#include "deeptrf/params.hpp"
#include "deeptrf/tensor.hpp"

namespace deeptrf {

using Label = int;

// Per-frame log-probabilities [frames, symbols]; each row log-sum-exps to 0.
using EmissionMatrix = Tensor;

struct AuxHeadConfig {
  std::size_t model_dim = 512;
  std::size_t hidden_dim = 256;
  std::size_t output_dim = 5001;
  double leaky_slope = 0.01;
};

// Two-layer MLP with a leaky ReLU, followed by log-softmax.
class AuxHead {
 public:
  static void declare(ParamSpecs& specs, const std::string& prefix, const AuxHeadConfig& config);
  AuxHead(const ParameterStore& params, const std::string& prefix, const AuxHeadConfig& config);

  EmissionMatrix forward(const Tensor& activations) const;

 private:
  AuxHeadConfig config_;
  Tensor w1_, b1_, w2_, b2_;
};

// Final head: a single linear layer and log-softmax.
class OutputHead {
 public:
  static void declare(ParamSpecs& specs, const std::string& prefix, std::size_t model_dim, std::size_t output_dim);
  OutputHead(const ParameterStore& params, const std::string& prefix);

  EmissionMatrix forward(const Tensor& activations) const;

 private:
  Tensor w_, b_;
};

// Fewest frames that can emit `labels` (one per label plus a blank between repeats).
std::size_t ctc_min_frames(std::span<const Label> labels);

// -log sum over alignments collapsing to `labels`, by forward-backward in log
// space. Not length-normalized. Throws InfeasibleAlignment when the utterance
// is too short.
Tensor ctc_loss(const EmissionMatrix& log_probs, std::span<const Label> labels, Label blank = 0);

// Mean per-frame negative log-likelihood of the aligned targets.
Tensor ce_frame_loss(const EmissionMatrix& log_probs, std::span<const Label> alignment);

struct LossReport {
  std::size_t step = 0;
  double total = 0.0;
  double final_loss = 0.0;
  std::vector<std::size_t> taps;
  std::vector<double> aux_losses;  // parallel to taps
  double grad_norm = 0.0;
};

struct Objective {
  Tensor total;
  LossReport report;
};

// total = final + lambda * sum(aux). aux_losses are parallel to taps.
Objective total_objective(const Tensor& final_loss, std::span<const Tensor> aux_losses,
                          std::span<const std::size_t> taps, double lambda);

// "step,total,final,aux_<k>...,grad_norm"
std::string loss_csv_header(std::span<const std::size_t> taps);
std::string loss_csv_row(const LossReport& report);

}  // namespace deeptrf
