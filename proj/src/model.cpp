// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include "deeptrf/model.hpp"

#include <algorithm>

#include "deeptrf/errors.hpp"
#include "deeptrf/ops.hpp"

namespace deeptrf {

namespace {

VggConfig vgg_config(const ModelConfig& c) {
  return {.input_dims = c.feature_dim,
          .channels1 = c.vgg_channels1,
          .channels2 = c.vgg_channels2,
          .output_dims = c.model_dim,
          .mode = c.mode};
}

TransformerLayerConfig layer_config(const ModelConfig& c) {
  return {.attention = {.model_dim = c.model_dim, .num_heads = c.num_heads}, .ff_dim = c.ff_dim, .dropout = c.dropout};
}

RepresentConfig represent_config(const ModelConfig& c) {
  return {.feature_dim = c.model_dim,
          .model_dim = c.model_dim,
          .concat_dim = c.concat_dim,
          .position_dim = c.position_dim,
          .num_heads = c.num_heads,
          .ff_dim = c.ff_dim,
          .dropout = c.dropout,
          .split = c.split};
}

AuxHeadConfig aux_config(const ModelConfig& c) {
  return {.model_dim = c.model_dim, .hidden_dim = c.aux_hidden, .output_dim = c.output_dim(),
          .leaky_slope = c.aux_leaky_slope};
}

std::string layer_prefix(std::size_t i) { return "layer" + std::to_string(i) + "."; }
std::string aux_prefix(std::size_t k) { return "aux" + std::to_string(k) + "."; }
std::string represent_prefix(std::size_t k) { return "represent" + std::to_string(k) + "."; }

bool contains(const std::vector<std::size_t>& v, std::size_t x) { return std::find(v.begin(), v.end(), x) != v.end(); }

}  // namespace

ParamSpecs Model::parameter_specs(const ModelConfig& raw) {
  const ModelConfig c = raw.normalized();
  ParamSpecs specs;
  VggFrontend::declare(specs, "frontend.", vgg_config(c));
  for (std::size_t i = 1; i <= c.num_layers; ++i) {
    TransformerLayer::declare(specs, layer_prefix(i), layer_config(c));
    if (contains(c.loss_taps, i)) AuxHead::declare(specs, aux_prefix(i), aux_config(c));
    if (contains(c.represent_points, i)) RepresentLayer::declare(specs, represent_prefix(i), represent_config(c));
  }
  OutputHead::declare(specs, "output.", c.model_dim, c.output_dim());
  return specs;
}

std::size_t Model::stack_parameter_count(const ModelConfig& raw) {
  const ModelConfig c = raw.normalized();
  ParamSpecs specs;
  for (std::size_t i = 1; i <= c.num_layers; ++i) TransformerLayer::declare(specs, layer_prefix(i), layer_config(c));
  return count_parameters(specs);
}

Model::Model(const ModelConfig& config) : config_(config.normalized()), params_(parameter_specs(config_), config_.seed) {
  frontend_ = std::make_unique<VggFrontend>(params_, "frontend.", vgg_config(config_));
  for (std::size_t i = 1; i <= config_.num_layers; ++i) layers_.emplace_back(params_, layer_prefix(i), layer_config(config_));
  for (auto k : config_.loss_taps) {
    aux_heads_.emplace_back(params_, aux_prefix(k), aux_config(config_));
    if (contains(config_.represent_points, k)) {
      represent_.emplace_back(std::in_place, params_, represent_prefix(k), represent_config(config_));
    } else {
      represent_.emplace_back(std::nullopt);
    }
  }
  output_ = std::make_unique<OutputHead>(params_, "output.");
}

ModelOutput Model::forward(const Tensor& features, bool train, Rng& rng, ForwardTrace* trace) const {
  const Tensor z0 = frontend_->forward(features);
  if (trace) trace->frontend_output = z0.detach();
  Tensor x = config_.input_positions ? add(z0, positional_encoding(z0.dim(0), config_.model_dim)) : z0;

  ModelOutput out;
  std::size_t tap = 0;
  for (std::size_t i = 1; i <= config_.num_layers; ++i) {
    AttentionTrace* attn = nullptr;
    if (trace) {
      trace->events.push_back("layer " + std::to_string(i));
      attn = &trace->attention.emplace_back();
    }
    x = layers_[i - 1].forward(x, train, rng, attn);
    if (tap < config_.loss_taps.size() && config_.loss_taps[tap] == i) {
      if (trace) {
        trace->events.push_back("tap " + std::to_string(i));
        trace->tap_inputs.emplace_back(i, x.detach());
      }
      out.aux.push_back(aux_heads_[tap].forward(x));
      if (represent_[tap]) {
        if (trace) {
          trace->events.push_back("represent " + std::to_string(i));
          trace->represent_inputs.emplace_back(i, x.detach());
          attn = &trace->attention.emplace_back();
        }
        x = represent_[tap]->forward(z0, x, train, rng, attn);
      }
      ++tap;
    }
  }
  if (trace) trace->events.push_back("output");
  out.final = output_->forward(x);
  return out;
}

std::vector<Label> Model::subsample_alignment(std::span<const Label> alignment, std::size_t output_frames) const {
  const std::size_t factor = subsampling_factor(config_.mode);
  if (alignment.size() < output_frames * factor) {
    throw InputError("alignment of " + std::to_string(alignment.size()) + " frames is too short for " +
                     std::to_string(output_frames) + " output frames");
  }
  std::vector<Label> out(output_frames);
  for (std::size_t t = 0; t < output_frames; ++t) out[t] = alignment[t * factor + factor / 2];
  return out;
}

Tensor utterance_loss(const ModelConfig& config, const Model& model, const EmissionMatrix& emissions,
                      const Utterance& utt) {
  if (config.mode == FrontendMode::Ctc) return ctc_loss(emissions, utt.labels, 0);
  if (utt.alignment.empty()) throw InputError("utterance " + utt.id + " has no frame alignment for CE training");
  const auto targets = model.subsample_alignment(utt.alignment, emissions.dim(0));
  return ce_frame_loss(emissions, targets);
}

Objective batch_objective(const Model& model, std::span<const Utterance* const> batch, bool train, Rng& rng) {
  if (batch.empty()) throw InputError("empty batch");
  const ModelConfig& c = model.config();
  const double w = 1.0 / static_cast<double>(batch.size());
  std::vector<Tensor> finals;
  std::vector<std::vector<Tensor>> aux(c.loss_taps.size());
  for (const Utterance* utt : batch) {
    const FeatureMatrix features =
        train && c.augment.enabled ? spec_augment(utt->features, c.augment, rng) : utt->features;
    const ModelOutput out = model.forward(features.to_tensor(), train, rng);
    finals.push_back(utterance_loss(c, model, out.final, *utt));
    for (std::size_t j = 0; j < out.aux.size(); ++j) aux[j].push_back(utterance_loss(c, model, out.aux[j], *utt));
  }
  const std::vector<double> weights(batch.size(), w);
  const Tensor final_loss = weighted_sum(finals, weights);
  std::vector<Tensor> aux_losses;
  for (const auto& terms : aux) aux_losses.push_back(weighted_sum(terms, weights));
  return total_objective(final_loss, aux_losses, c.loss_taps, c.aux_weight);
}

}  // namespace deeptrf
