// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include "deeptrf/transformer.hpp"

#include <cmath>

#include "deeptrf/errors.hpp"
#include "deeptrf/ops.hpp"

namespace deeptrf {

void AttentionConfig::validate() const {
  if (num_heads == 0 || model_dim == 0 || model_dim % num_heads != 0) {
    throw ConfigError("attention width " + std::to_string(model_dim) + " is not divisible into " +
                      std::to_string(num_heads) + " heads");
  }
}

namespace {

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1)) {
    throw DimensionError("attention: query " + shape_str(q.shape()) + " and key " + shape_str(k.shape()) +
                         " widths differ");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  return softmax(scale(matmul(q, transpose(k)), inv_sqrt_d), 1);
}

void check_values(const Tensor& k, const Tensor& v) {
  if (v.rank() != 2 || v.dim(0) != k.dim(0)) {
    throw DimensionError("attention: key " + shape_str(k.shape()) + " and value " + shape_str(v.shape()) +
                         " lengths differ");
  }
}

}  // namespace

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionTrace* trace) {
  check_values(k, v);
  Tensor w = attention_weights(q, k);
  if (trace) trace->weights.push_back(w.detach());
  return matmul(w, v);
}

Tensor positional_encoding(std::size_t length, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw ConfigError("positional encoding width must be even, got " + std::to_string(dim));
  if (length == 0) throw DimensionError("positional encoding length must be positive");
  std::vector<double> table(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      table[pos * dim + 2 * i] = std::sin(angle);
      table[pos * dim + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from({length, dim}, std::move(table));
}

void TransformerLayer::declare(ParamSpecs& specs, const std::string& prefix, const TransformerLayerConfig& c) {
  c.attention.validate();
  const std::size_t d = c.attention.model_dim;
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    specs.push_back({prefix + name + ".weight", {in, out}, Init::FanInUniform, in});
    specs.push_back({prefix + name + ".bias", {out}, Init::Zeros});
  };
  auto norm = [&](const std::string& name) {
    specs.push_back({prefix + name + ".gain", {d}, Init::Ones});
    specs.push_back({prefix + name + ".bias", {d}, Init::Zeros});
  };
  dense("attn.query", d, d);
  dense("attn.key", d, d);
  dense("attn.value", d, d);
  dense("attn.out", d, d);
  norm("norm1");
  dense("ff1", d, c.ff_dim);
  dense("ff2", c.ff_dim, d);
  norm("norm2");
}

TransformerLayer::TransformerLayer(const ParameterStore& p, const std::string& prefix,
                                   const TransformerLayerConfig& config)
    : config_(config),
      wq_(p.get(prefix + "attn.query.weight")),
      bq_(p.get(prefix + "attn.query.bias")),
      wk_(p.get(prefix + "attn.key.weight")),
      bk_(p.get(prefix + "attn.key.bias")),
      wv_(p.get(prefix + "attn.value.weight")),
      bv_(p.get(prefix + "attn.value.bias")),
      wo_(p.get(prefix + "attn.out.weight")),
      bo_(p.get(prefix + "attn.out.bias")),
      norm1_gain_(p.get(prefix + "norm1.gain")),
      norm1_bias_(p.get(prefix + "norm1.bias")),
      ff1_w_(p.get(prefix + "ff1.weight")),
      ff1_b_(p.get(prefix + "ff1.bias")),
      ff2_w_(p.get(prefix + "ff2.weight")),
      ff2_b_(p.get(prefix + "ff2.bias")),
      norm2_gain_(p.get(prefix + "norm2.gain")),
      norm2_bias_(p.get(prefix + "norm2.bias")) {
  config_.attention.validate();
}

Tensor TransformerLayer::multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value, bool train,
                                              Rng& rng, AttentionTrace* trace) const {
  const std::size_t d = config_.attention.model_dim;
  for (const Tensor* t : {&query, &key, &value}) {
    if (t->rank() != 2 || t->dim(1) != d) {
      throw DimensionError("multi-head attention expects width " + std::to_string(d) + ", got " +
                           shape_str(t->shape()));
    }
  }
  check_values(key, value);
  const Tensor q = linear(query, wq_, bq_);
  const Tensor k = linear(key, wk_, bk_);
  const Tensor v = linear(value, wv_, bv_);
  const std::size_t dh = config_.attention.head_dim();
  std::vector<Tensor> heads;
  heads.reserve(config_.attention.num_heads);
  for (std::size_t h = 0; h < config_.attention.num_heads; ++h) {
    const Tensor qh = slice(q, 1, h * dh, (h + 1) * dh);
    const Tensor kh = slice(k, 1, h * dh, (h + 1) * dh);
    const Tensor vh = slice(v, 1, h * dh, (h + 1) * dh);
    Tensor w = attention_weights(qh, kh);
    if (trace) trace->weights.push_back(w.detach());
    w = dropout(w, config_.dropout, train, rng);
    heads.push_back(matmul(w, vh));
  }
  return linear(concat(heads, 1), wo_, bo_);
}

Tensor TransformerLayer::forward(const Tensor& x, bool train, Rng& rng, AttentionTrace* trace) const {
  return forward(x, x, train, rng, trace);
}

Tensor TransformerLayer::forward(const Tensor& query, const Tensor& memory, bool train, Rng& rng,
                                 AttentionTrace* trace) const {
  const Tensor attended = multi_head_attention(query, memory, memory, train, rng, trace);
  const Tensor h = layer_norm(add(query, attended), norm1_gain_, norm1_bias_);
  Tensor f = relu(linear(h, ff1_w_, ff1_b_));
  f = dropout(f, config_.dropout, train, rng);
  f = linear(f, ff2_w_, ff2_b_);
  return layer_norm(add(h, f), norm2_gain_, norm2_bias_);
}

}  // namespace deeptrf
