// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include "deeptrf/represent.hpp"

#include "deeptrf/errors.hpp"
#include "deeptrf/ops.hpp"

namespace deeptrf {

std::string to_string(Split split) { return split == Split::A ? "A" : "B"; }

Split split_from_string(const std::string& text) {
  if (text == "A" || text == "a") return Split::A;
  if (text == "B" || text == "b") return Split::B;
  throw ConfigError("unknown split '" + text + "' (expected A or B)");
}

Tensor project_and_tag(const Tensor& z, const Tensor& weight, const Tensor& bias, const Tensor& norm_gain,
                       const Tensor& norm_bias, const Tensor& positions) {
  if (z.rank() != 2 || positions.rank() != 2 || positions.dim(0) != z.dim(0)) {
    throw DimensionError("project_and_tag: sequence " + shape_str(z.shape()) + " and positions " +
                         shape_str(positions.shape()) + " lengths differ");
  }
  const Tensor projected = layer_norm(linear(z, weight, bias), norm_gain, norm_bias);
  return concat({projected, positions}, 1);
}

Tensor time_concat(const Tensor& z0p, const Tensor& zkp) {
  if (z0p.shape() != zkp.shape()) {
    throw DimensionError("time_concat: projected features " + shape_str(z0p.shape()) + " and activations " +
                         shape_str(zkp.shape()) + " differ");
  }
  return concat({z0p, zkp}, 0);
}

namespace {

TransformerLayerConfig fusion_config(const RepresentConfig& c) {
  return {.attention = {.model_dim = c.fused_dim(), .num_heads = c.num_heads}, .ff_dim = c.ff_dim, .dropout = c.dropout};
}

}  // namespace

void RepresentLayer::declare(ParamSpecs& specs, const std::string& prefix, const RepresentConfig& c) {
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    specs.push_back({prefix + name + ".weight", {in, out}, Init::FanInUniform, in});
    specs.push_back({prefix + name + ".bias", {out}, Init::Zeros});
  };
  auto norm = [&](const std::string& name, std::size_t width) {
    specs.push_back({prefix + name + ".gain", {width}, Init::Ones});
    specs.push_back({prefix + name + ".bias", {width}, Init::Zeros});
  };
  if (c.position_dim % 2 != 0) throw ConfigError("re-presentation position width must be even");
  dense("feat_proj", c.feature_dim, c.concat_dim);
  norm("feat_norm", c.concat_dim);
  dense("hid_proj", c.model_dim, c.concat_dim);
  norm("hid_norm", c.concat_dim);
  TransformerLayer::declare(specs, prefix + "fusion.", fusion_config(c));
  dense("out_proj", c.fused_dim(), c.model_dim);
  norm("out_norm", c.model_dim);
}

RepresentLayer::RepresentLayer(const ParameterStore& p, const std::string& prefix, const RepresentConfig& config)
    : config_(config),
      feat_w_(p.get(prefix + "feat_proj.weight")),
      feat_b_(p.get(prefix + "feat_proj.bias")),
      feat_gain_(p.get(prefix + "feat_norm.gain")),
      feat_bias_(p.get(prefix + "feat_norm.bias")),
      hid_w_(p.get(prefix + "hid_proj.weight")),
      hid_b_(p.get(prefix + "hid_proj.bias")),
      hid_gain_(p.get(prefix + "hid_norm.gain")),
      hid_bias_(p.get(prefix + "hid_norm.bias")),
      fusion_(p, prefix + "fusion.", fusion_config(config)),
      out_w_(p.get(prefix + "out_proj.weight")),
      out_b_(p.get(prefix + "out_proj.bias")),
      out_gain_(p.get(prefix + "out_norm.gain")),
      out_bias_(p.get(prefix + "out_norm.bias")) {}

Tensor RepresentLayer::forward(const Tensor& z0, const Tensor& zk, bool train, Rng& rng, AttentionTrace* trace,
                               const RepresentOptions& options) const {
  if (z0.rank() != 2 || zk.rank() != 2 || z0.dim(0) != zk.dim(0)) {
    throw DimensionError("re-presentation needs equal-length inputs, got " + shape_str(z0.shape()) + " and " +
                         shape_str(zk.shape()));
  }
  const std::size_t length = z0.dim(0);
  // Both halves of the memory describe the same time indices, so they share positions.
  const Tensor positions = positional_encoding(length, config_.position_dim);
  const Tensor z0p = project_and_tag(z0, feat_w_, feat_b_, feat_gain_, feat_bias_, positions);
  const Tensor zkp = project_and_tag(zk, hid_w_, hid_b_, hid_gain_, hid_bias_, positions);
  const Tensor memory = options.features_only_memory ? z0p : time_concat(z0p, zkp);
  const Tensor& query = config_.split == Split::A ? z0p : zkp;
  const Tensor fused = fusion_.forward(query, memory, train, rng, trace);
  return layer_norm(relu(linear(fused, out_w_, out_b_)), out_gain_, out_bias_);
}

}  // namespace deeptrf
