// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "deeptrf/params.hpp"
#include "deeptrf/rng.hpp"
#include "deeptrf/tensor.hpp"

namespace deeptrf {

struct AttentionConfig {
  std::size_t model_dim = 512;
  std::size_t num_heads = 8;

  std::size_t head_dim() const { return model_dim / num_heads; }
  // Throws ConfigError unless num_heads divides model_dim.
  void validate() const;
};

// Collects the post-softmax (pre-dropout) attention weights of every head.
struct AttentionTrace {
  std::vector<Tensor> weights;
};

// softmax(Q K^T / sqrt(d)) V for Q [Sq, d], K [Sk, d], V [Sk, dv].
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionTrace* trace = nullptr);

// Sinusoidal table E [S, d]: E[p, 2i] = sin(p / 10000^(2i/d)), E[p, 2i+1] = cos(same).
Tensor positional_encoding(std::size_t length, std::size_t dim);

struct TransformerLayerConfig {
  AttentionConfig attention;
  std::size_t ff_dim = 2048;
  double dropout = 0.15;
};

// Post-norm encoder layer: multi-head attention, residual, layer norm, then
// linear -> ReLU -> dropout -> linear, residual, layer norm. Dropout is also
// applied to the attention weights.
class TransformerLayer {
 public:
  static void declare(ParamSpecs& specs, const std::string& prefix, const TransformerLayerConfig& config);
  TransformerLayer(const ParameterStore& params, const std::string& prefix, const TransformerLayerConfig& config);

  // concat(head_1..head_P) W_O with head_p = Attn(Q W_p^Q, K W_p^K, V W_p^V).
  Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value, bool train, Rng& rng,
                              AttentionTrace* trace = nullptr) const;

  // Self-attention block (Q = K = V = x).
  Tensor forward(const Tensor& x, bool train, Rng& rng, AttentionTrace* trace = nullptr) const;
  // Same block with queries from `query` and keys/values from `memory`; the
  // residual path follows the queries, so the output has query length.
  Tensor forward(const Tensor& query, const Tensor& memory, bool train, Rng& rng,
                 AttentionTrace* trace = nullptr) const;

  const TransformerLayerConfig& config() const { return config_; }

 private:
  TransformerLayerConfig config_;
  Tensor wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  Tensor norm1_gain_, norm1_bias_;
  Tensor ff1_w_, ff1_b_, ff2_w_, ff2_b_;
  Tensor norm2_gain_, norm2_bias_;
};

}  // namespace deeptrf
