// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include "deeptrf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deeptrf/errors.hpp"

namespace deeptrf {

using detail::make_result;
using detail::Node;

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// outer x n x inner view of a tensor around one axis.
struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

bool wants_grad(const Node& n, std::size_t i) { return n.parents[i]->requires_grad; }

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) gemm_nt(self.grad.data(), pb.value.data(), pa.grad_buffer().data(), m, n, k);
    if (pb.requires_grad) gemm_tn(pa.value.data(), self.grad.data(), pb.grad_buffer().data(), m, k, n);
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return make_result({c, r}, std::move(out), {a}, [r, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(self, p)) continue;
      auto& g = self.parents[p]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(self, p)) continue;
      const double sign = p == 0 ? 1.0 : -1.0;
      auto& g = self.parents[p]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(self, p)) continue;
      const auto& other = self.parents[1 - p]->value;
      auto& g = self.parents[p]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  const std::size_t width = a.shape().back();
  if (bias.numel() != width) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " + shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto b = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % width];
  return make_result(a.shape(), std::move(out), {a, bias}, [width](Node& self) {
    if (wants_grad(self, 0)) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % width] += self.grad[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result({1}, {total}, {a}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor weighted_sum(std::span<const Tensor> scalars, std::span<const double> weights) {
  if (scalars.size() != weights.size()) throw DimensionError("weighted_sum: one weight per term required");
  double total = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].numel() != 1) throw DimensionError("weighted_sum: terms must be scalars");
    total += weights[i] * scalars[i].item();
  }
  std::vector<double> w(weights.begin(), weights.end());
  return make_result({1}, {total}, std::vector<Tensor>(scalars.begin(), scalars.end()), [w](Node& self) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (wants_grad(self, i)) self.parents[i]->grad_buffer()[0] += w[i] * self.grad[0];
    }
  });
}

namespace {
thread_local BranchRecorder* active_recorder = nullptr;
}  // namespace

BranchRecorder::BranchRecorder() : previous_(active_recorder) { active_recorder = this; }
BranchRecorder::~BranchRecorder() { active_recorder = previous_; }

void BranchRecorder::record(std::uint64_t value) {
  if (!active_recorder) return;
  auto& h = active_recorder->hash_;
  h = (h ^ value) * 0x100000001b3ULL;
}

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0); }

Tensor leaky_relu(const Tensor& a, double slope) {
  std::vector<double> out(a.numel());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : slope * in[i];
  if (active_recorder) {
    for (double x : in) BranchRecorder::record(x > 0.0);
  }
  return make_result(a.shape(), std::move(out), {a}, [slope](Node& self) {
    const auto& x = self.parents[0]->value;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (x[i] > 0.0 ? 1.0 : slope);
  });
}

Tensor dropout(const Tensor& a, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  if (!train || rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(a.numel());
  for (auto& m : mask) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * mask[i];
  return make_result(a.shape(), std::move(out), {a}, [mask = std::move(mask)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw DimensionError("concat: axis out of range for " + shape_str(shape));
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) throw DimensionError("concat: rank mismatch");
    s[axis] = shape[axis];
    if (s != shape) {
      throw DimensionError("concat: " + shape_str(parts[0].shape()) + " and " + shape_str(p.shape()) +
                           " differ off the concat axis");
    }
    total += p.dim(axis);
  }
  shape[axis] = total;
  const AxisView v = axis_view(shape, axis);
  std::vector<double> out(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t n = p.dim(axis);
    auto in = p.data();
    for (std::size_t o = 0; o < v.outer; ++o)
      std::copy_n(in.begin() + o * n * v.inner, n * v.inner, out.begin() + (o * v.n + offset) * v.inner);
    offset += n;
  }
  return make_result(shape, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                     [v, offsets](Node& self) {
                       for (std::size_t p = 0; p < self.parents.size(); ++p) {
                         if (!wants_grad(self, p)) continue;
                         auto& g = self.parents[p]->grad_buffer();
                         const std::size_t n = g.size() / (v.outer * v.inner);
                         for (std::size_t o = 0; o < v.outer; ++o) {
                           const double* src = self.grad.data() + (o * v.n + offsets[p]) * v.inner;
                           double* dst = g.data() + o * n * v.inner;
                           for (std::size_t i = 0; i < n * v.inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisView v = axis_view(a.shape(), axis);
  if (begin >= end || end > v.n) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                         shape_str(a.shape()));
  }
  Shape shape = a.shape();
  const std::size_t n = end - begin;
  shape[axis] = n;
  std::vector<double> out(shape_numel(shape));
  auto in = a.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    std::copy_n(in.begin() + (o * v.n + begin) * v.inner, n * v.inner, out.begin() + o * n * v.inner);
  return make_result(shape, std::move(out), {a}, [v, begin, n](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o) {
      const double* src = self.grad.data() + o * n * v.inner;
      double* dst = g.data() + (o * v.n + begin) * v.inner;
      for (std::size_t i = 0; i < n * v.inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor swap_leading_axes(const Tensor& a) {
  require_rank(a, 3, "swap_leading_axes");
  const std::size_t A = a.dim(0), B = a.dim(1), C = a.dim(2);
  std::vector<double> out(a.numel());
  auto in = a.data();
  for (std::size_t i = 0; i < A; ++i)
    for (std::size_t j = 0; j < B; ++j) std::copy_n(in.begin() + (i * B + j) * C, C, out.begin() + (j * A + i) * C);
  return make_result({B, A, C}, std::move(out), {a}, [A, B, C](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < A; ++i)
      for (std::size_t j = 0; j < B; ++j)
        for (std::size_t k = 0; k < C; ++k) g[(i * B + j) * C + k] += self.grad[(j * A + i) * C + k];
  });
}

namespace {

void check_finite(std::span<const double> values, const char* op) {
  for (double x : values) {
    if (std::isnan(x)) throw NonFiniteError(std::string(op) + ": NaN input");
  }
}

}  // namespace

Tensor softmax(const Tensor& a, std::size_t axis) {
  check_finite(a.data(), "softmax");
  const AxisView v = axis_view(a.shape(), axis);
  std::vector<double> out(a.numel());
  auto in = a.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t j = 0; j < v.inner; ++j) {
      const std::size_t base = o * v.n * v.inner + j;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < v.n; ++i) mx = std::max(mx, in[base + i * v.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < v.n; ++i) {
        const double e = std::exp(in[base + i * v.inner] - mx);
        out[base + i * v.inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < v.n; ++i) out[base + i * v.inner] /= z;
    }
  }
  return make_result(a.shape(), std::move(out), {a}, [v](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& y = self.value;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t j = 0; j < v.inner; ++j) {
        const std::size_t base = o * v.n * v.inner + j;
        double dot = 0.0;
        for (std::size_t i = 0; i < v.n; ++i) dot += self.grad[base + i * v.inner] * y[base + i * v.inner];
        for (std::size_t i = 0; i < v.n; ++i) {
          const std::size_t k = base + i * v.inner;
          g[k] += y[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  check_finite(a.data(), "log_softmax");
  const AxisView v = axis_view(a.shape(), axis);
  std::vector<double> out(a.numel());
  auto in = a.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t j = 0; j < v.inner; ++j) {
      const std::size_t base = o * v.n * v.inner + j;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < v.n; ++i) mx = std::max(mx, in[base + i * v.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < v.n; ++i) z += std::exp(in[base + i * v.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t i = 0; i < v.n; ++i) out[base + i * v.inner] = in[base + i * v.inner] - lse;
    }
  }
  return make_result(a.shape(), std::move(out), {a}, [v](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& y = self.value;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t j = 0; j < v.inner; ++j) {
        const std::size_t base = o * v.n * v.inner + j;
        double total = 0.0;
        for (std::size_t i = 0; i < v.n; ++i) total += self.grad[base + i * v.inner];
        for (std::size_t i = 0; i < v.n; ++i) {
          const std::size_t k = base + i * v.inner;
          g[k] += self.grad[k] - std::exp(y[k]) * total;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t width = x.shape().back();
  if (width < 2) throw DimensionError("layer_norm: normalized axis needs length >= 2, got " + shape_str(x.shape()));
  if (gain.numel() != width || bias.numel() != width) {
    throw DimensionError("layer_norm: gain/bias must have length " + std::to_string(width));
  }
  const std::size_t rows = x.numel() / width;
  std::vector<double> xhat(x.numel()), inv_std(rows), out(x.numel());
  auto in = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * width;
    double mu = 0.0;
    for (std::size_t i = 0; i < width; ++i) mu += row[i];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t i = 0; i < width; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < width; ++i) {
      const std::size_t k = r * width + i;
      xhat[k] = (row[i] - mu) * inv_std[r];
      out[k] = xhat[k] * gv[i] + bv[i];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [width, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const auto& gv = self.parents[1]->value;
                       if (wants_grad(self, 1)) {
                         auto& gg = self.parents[1]->grad_buffer();
                         for (std::size_t k = 0; k < self.grad.size(); ++k) gg[k % width] += self.grad[k] * xhat[k];
                       }
                       if (wants_grad(self, 2)) {
                         auto& gb = self.parents[2]->grad_buffer();
                         for (std::size_t k = 0; k < self.grad.size(); ++k) gb[k % width] += self.grad[k];
                       }
                       if (!wants_grad(self, 0)) return;
                       auto& gx = self.parents[0]->grad_buffer();
                       const double n = static_cast<double>(width);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_dy = 0.0, mean_dy_xhat = 0.0;
                         for (std::size_t i = 0; i < width; ++i) {
                           const std::size_t k = r * width + i;
                           const double dy = self.grad[k] * gv[i];
                           mean_dy += dy;
                           mean_dy_xhat += dy * xhat[k];
                         }
                         mean_dy /= n;
                         mean_dy_xhat /= n;
                         for (std::size_t i = 0; i < width; ++i) {
                           const std::size_t k = r * width + i;
                           const double dy = self.grad[k] * gv[i];
                           gx[k] += inv_std[r] * (dy - mean_dy - xhat[k] * mean_dy_xhat);
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias) {
  Tensor y = matmul(x, weight);
  return bias ? add_bias(y, *bias) : y;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                         shape_str(weight.shape()));
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw DimensionError("conv2d: kernel sizes must be odd");
  if (bias.numel() != cout) throw DimensionError("conv2d: bias must have one entry per output channel");
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  const long H = static_cast<long>(h), W = static_cast<long>(w);

  std::vector<double> out(cout * h * w);
  auto in = x.data();
  auto wt = weight.data();
  for (std::size_t co = 0; co < cout; ++co) {
    double* plane = out.data() + co * h * w;
    std::fill_n(plane, h * w, bias.data()[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* src = in.data() + ci * h * w;
      for (std::size_t a = 0; a < kh; ++a) {
        for (std::size_t b = 0; b < kw; ++b) {
          const double kv = wt[((co * cin + ci) * kh + a) * kw + b];
          const long di = static_cast<long>(a) - ph, dj = static_cast<long>(b) - pw;
          const long i0 = std::max(0L, -di), i1 = std::min(H, H - di);
          const long j0 = std::max(0L, -dj), j1 = std::min(W, W - dj);
          for (long i = i0; i < i1; ++i) {
            double* orow = plane + i * W;
            const double* irow = src + (i + di) * W + dj;
            for (long j = j0; j < j1; ++j) orow[j] += kv * irow[j];
          }
        }
      }
    }
  }
  return make_result({cout, h, w}, std::move(out), {x, weight, bias},
                     [cin, cout, kh, kw, ph, pw, H, W](Node& self) {
                       const auto& in = self.parents[0]->value;
                       const auto& wt = self.parents[1]->value;
                       const std::size_t plane_size = static_cast<std::size_t>(H * W);
                       double* gx = wants_grad(self, 0) ? self.parents[0]->grad_buffer().data() : nullptr;
                       double* gw = wants_grad(self, 1) ? self.parents[1]->grad_buffer().data() : nullptr;
                       if (wants_grad(self, 2)) {
                         auto& gb = self.parents[2]->grad_buffer();
                         for (std::size_t co = 0; co < cout; ++co)
                           for (std::size_t k = 0; k < plane_size; ++k) gb[co] += self.grad[co * plane_size + k];
                       }
                       for (std::size_t co = 0; co < cout; ++co) {
                         const double* gplane = self.grad.data() + co * plane_size;
                         for (std::size_t ci = 0; ci < cin; ++ci) {
                           const double* src = in.data() + ci * plane_size;
                           for (std::size_t a = 0; a < kh; ++a) {
                             for (std::size_t b = 0; b < kw; ++b) {
                               const std::size_t widx = ((co * cin + ci) * kh + a) * kw + b;
                               const long di = static_cast<long>(a) - ph, dj = static_cast<long>(b) - pw;
                               const long i0 = std::max(0L, -di), i1 = std::min(H, H - di);
                               const long j0 = std::max(0L, -dj), j1 = std::min(W, W - dj);
                               double acc = 0.0;
                               const double kv = wt[widx];
                               for (long i = i0; i < i1; ++i) {
                                 const double* grow = gplane + i * W;
                                 const long off = (i + di) * W + dj;
                                 if (gw) {
                                   for (long j = j0; j < j1; ++j) acc += grow[j] * src[off + j];
                                 }
                                 if (gx) {
                                   double* xrow = gx + ci * plane_size + off;
                                   for (long j = j0; j < j1; ++j) xrow[j] += kv * grow[j];
                                 }
                               }
                               if (gw) gw[widx] += acc;
                             }
                           }
                         }
                       }
                     });
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel_h, std::size_t kernel_w) {
  require_rank(x, 3, "max_pool2d");
  if (kernel_h == 0 || kernel_w == 0) throw DimensionError("max_pool2d: kernel must be positive");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h / kernel_h, ow = w / kernel_w;
  if (oh == 0 || ow == 0) {
    throw DimensionError("max_pool2d: input " + shape_str(x.shape()) + " smaller than kernel");
  }
  std::vector<double> out(c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  auto in = x.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = ch * h * w + (i * kernel_h) * w + j * kernel_w;
        for (std::size_t a = 0; a < kernel_h; ++a) {
          for (std::size_t b = 0; b < kernel_w; ++b) {
            const std::size_t k = ch * h * w + (i * kernel_h + a) * w + (j * kernel_w + b);
            if (in[k] > in[best]) best = k;
          }
        }
        const std::size_t o = (ch * oh + i) * ow + j;
        out[o] = in[best];
        argmax[o] = best;
        if (active_recorder) BranchRecorder::record(best);
      }
    }
  }
  return make_result({c, oh, ow}, std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
  });
}

}  // namespace deeptrf
