// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Mid-network feature re-presentation. The frontend output Z0 and the
// activations Zk of an intermediate layer are each projected, layer-normed and
// tagged with sinusoidal positions, stacked along time into a 2S-long memory,
// and attended over by a transformer layer whose queries are one of the two
// streams. The result is projected back to the model width:
//
//   Z0' = [LN(Z0 W1) | E],  Zk' = [LN(Zk W2) | E],  O = [Z0'; Zk']
//   Z'  = Transformer(Q = Z0' (split A) or Zk' (split B), K = V = O)
//   Z_{k+1} = LN(ReLU(Z' W3))

#pragma once

#include <string>

#include "deeptrf/params.hpp"
#include "deeptrf/transformer.hpp"

namespace deeptrf {

enum class Split { A, B };

std::string to_string(Split split);
Split split_from_string(const std::string& text);

struct RepresentConfig {
  std::size_t feature_dim = 512;  // width of Z0
  std::size_t model_dim = 512;    // width of Zk and of the output
  std::size_t concat_dim = 768;   // d_c
  std::size_t position_dim = 256; // d_e
  std::size_t num_heads = 8;
  std::size_t ff_dim = 2048;
  double dropout = 0.15;
  Split split = Split::B;

  std::size_t fused_dim() const { return concat_dim + position_dim; }
};

// [LN(Z W + b) | E] along the feature axis.
Tensor project_and_tag(const Tensor& z, const Tensor& weight, const Tensor& bias, const Tensor& norm_gain,
                       const Tensor& norm_bias, const Tensor& positions);

// Rows [0, S) are z0p, rows [S, 2S) are zkp.
Tensor time_concat(const Tensor& z0p, const Tensor& zkp);

struct RepresentOptions {
  // Diagnostic: keys/values restricted to the projected-feature half of O.
  bool features_only_memory = false;
};

class RepresentLayer {
 public:
  static void declare(ParamSpecs& specs, const std::string& prefix, const RepresentConfig& config);
  RepresentLayer(const ParameterStore& params, const std::string& prefix, const RepresentConfig& config);

  Tensor forward(const Tensor& z0, const Tensor& zk, bool train, Rng& rng, AttentionTrace* trace = nullptr,
                 const RepresentOptions& options = {}) const;

  const RepresentConfig& config() const { return config_; }

 private:
  RepresentConfig config_;
  Tensor feat_w_, feat_b_, feat_gain_, feat_bias_;
  Tensor hid_w_, hid_b_, hid_gain_, hid_bias_;
  TransformerLayer fusion_;
  Tensor out_w_, out_b_, out_gain_, out_bias_;
};

}  // namespace deeptrf
