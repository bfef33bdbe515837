// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Matrices are rank-2 tensors laid out as
// [rows, cols]; feature maps are rank-3 tensors laid out as [channels, time, freq].

#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "deeptrf/rng.hpp"
#include "deeptrf/tensor.hpp"

namespace deeptrf {

// While alive, fingerprints the branch taken by every piecewise-linear op on
// this thread (ReLU side, max-pool winner). Two evaluations with equal
// fingerprints lie on the same smooth piece of the function.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

  std::uint64_t fingerprint() const { return hash_; }
  static void record(std::uint64_t value);

 private:
  BranchRecorder* previous_;
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// Adds a vector along the last axis of a (bias broadcast over rows).
Tensor add_bias(const Tensor& a, const Tensor& bias);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// sum_i weights[i] * scalars[i]
Tensor weighted_sum(std::span<const Tensor> scalars, std::span<const double> weights);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);

// Inverted dropout. Identity when !train or rate == 0.
Tensor dropout(const Tensor& a, double rate, bool train, Rng& rng);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
// Half-open range [begin, end) along axis.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, Shape shape);
// [A, B, C] -> [B, A, C]
Tensor swap_leading_axes(const Tensor& a);

Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);

// Normalizes over the last axis, then applies gain and bias (both of that length).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// x [rows, in] times weight [in, out], plus optional bias [out].
Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt);

// Stride-1 "same" convolution. x [Cin, H, W], weight [Cout, Cin, kh, kw] with
// odd kernel sizes, bias [Cout].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);
// Non-overlapping max pooling (stride = kernel); trailing remainder is dropped.
Tensor max_pool2d(const Tensor& x, std::size_t kernel_h, std::size_t kernel_w);

}  // namespace deeptrf
