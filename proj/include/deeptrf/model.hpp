// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Network assembly: frontend -> transformer layers 1..M. After each layer k in
// the loss-tap set an auxiliary head reads Z_k; if k is also a
// re-presentation point, a RepresentLayer then maps (Z0, Z_k) to the input
// of layer k + 1. The final layer feeds a linear output head.

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "deeptrf/config.hpp"
#include "deeptrf/frontend.hpp"
#include "deeptrf/heads_loss.hpp"
#include "deeptrf/params.hpp"
#include "deeptrf/represent.hpp"
#include "deeptrf/transformer.hpp"

namespace deeptrf {

struct Utterance {
  std::string id;
  FeatureMatrix features;          // normalized
  std::vector<Label> labels;       // 1..V
  std::vector<Label> alignment;    // per input frame, 0 = silence; may be empty in ctc mode
};

// Instrumentation filled by Model::forward when requested.
struct ForwardTrace {
  Tensor frontend_output;                            // Z0
  std::vector<std::pair<std::size_t, Tensor>> tap_inputs;
  std::vector<std::pair<std::size_t, Tensor>> represent_inputs;
  std::vector<std::string> events;                   // "layer 3", "tap 3", "represent 3", "output"
  std::vector<AttentionTrace> attention;             // one per transformer or fusion layer, in order
};

struct ModelOutput {
  EmissionMatrix final;
  std::vector<EmissionMatrix> aux;  // parallel to config().loss_taps
};

class Model {
 public:
  static ParamSpecs parameter_specs(const ModelConfig& config);
  // Transformer layers only (attention, feed-forward and their norms).
  static std::size_t stack_parameter_count(const ModelConfig& config);

  explicit Model(const ModelConfig& config);

  ModelOutput forward(const Tensor& features, bool train, Rng& rng, ForwardTrace* trace = nullptr) const;

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  std::size_t parameter_count() const { return params_.count(); }

  // Frame-level targets for CE training, aligned with the subsampled output.
  std::vector<Label> subsample_alignment(std::span<const Label> alignment, std::size_t output_frames) const;

 private:
  ModelConfig config_;
  ParameterStore params_;
  std::unique_ptr<VggFrontend> frontend_;
  std::vector<TransformerLayer> layers_;
  std::vector<AuxHead> aux_heads_;
  std::vector<std::optional<RepresentLayer>> represent_;  // indexed like aux_heads_
  std::unique_ptr<OutputHead> output_;
};

// Loss of one utterance (CTC or frame CE, by mode).
Tensor utterance_loss(const ModelConfig& config, const Model& model, const EmissionMatrix& emissions,
                      const Utterance& utt);

// Batch-mean objective with per-tap auxiliary terms weighted by aux_weight.
Objective batch_objective(const Model& model, std::span<const Utterance* const> batch, bool train, Rng& rng);

}  // namespace deeptrf
