// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "deeptrf/errors.hpp"
#include "deeptrf/params.hpp"
#include "deeptrf/transformer.hpp"
#include "test_util.hpp"

using namespace deeptrf;
using deeptrf::testing::max_abs_diff;
using deeptrf::testing::project;
using deeptrf::testing::random_tensor;

namespace {

ParameterStore layer_params(const TransformerLayerConfig& c, std::uint64_t seed, const std::string& prefix = "l.") {
  ParamSpecs specs;
  TransformerLayer::declare(specs, prefix, c);
  return ParameterStore(specs, seed);
}

void fill(const ParameterStore& p, const std::string& name, double value) {
  Tensor t = p.get(name);
  for (auto& v : t.mutable_data()) v = value;
}

void set_identity(const ParameterStore& p, const std::string& name) {
  Tensor t = p.get(name);
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), 0.0);
  for (std::size_t i = 0; i < t.dim(0); ++i) d[i * t.dim(1) + i] = 1.0;
}

// Direct two-loop softmax-weighted sum.
std::vector<double> attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t sq = q.dim(0), sk = k.dim(0), d = q.dim(1), dv = v.dim(1);
  std::vector<double> out(sq * dv, 0.0);
  for (std::size_t i = 0; i < sq; ++i) {
    std::vector<double> logits(sk);
    double z = 0.0;
    for (std::size_t j = 0; j < sk; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q.at(i, c) * k.at(j, c);
      logits[j] = std::exp(dot / std::sqrt(static_cast<double>(d)));
      z += logits[j];
    }
    for (std::size_t j = 0; j < sk; ++j)
      for (std::size_t c = 0; c < dv; ++c) out[i * dv + c] += logits[j] / z * v.at(j, c);
  }
  return out;
}

std::vector<double> affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(1);
  std::vector<double> y(n * out);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < out; ++c) {
      double acc = b.data()[c];
      for (std::size_t i = 0; i < in; ++i) acc += x.at(r, i) * w.at(i, c);
      y[r * out + c] = acc;
    }
  return y;
}

}  // namespace

TEST_CASE("scaled dot attention") {
  Rng rng(1);
  SUBCASE("single key gets all the weight") {
    Tensor q = random_tensor({3, 4}, rng, false), k = random_tensor({1, 4}, rng, false), v = random_tensor({1, 5}, rng, false);
    Tensor y = scaled_dot_attention(q, k, v);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < 5; ++c) CHECK(y.at(i, c) == doctest::Approx(v.at(0, c)).epsilon(1e-14));
  }
  SUBCASE("orthogonal query averages values") {
    Tensor q = Tensor::from({1, 2}, {1, 0});
    Tensor k = Tensor::from({3, 2}, {0, 1, 0, -2, 0, 5});
    Tensor v = random_tensor({3, 2}, rng, false);
    Tensor y = scaled_dot_attention(q, k, v);
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(y.at(0, c) == doctest::Approx((v.at(0, c) + v.at(1, c) + v.at(2, c)) / 3).epsilon(1e-14));
    }
  }
  SUBCASE("matches the direct oracle") {
    Tensor q = random_tensor({3, 4}, rng, false), k = random_tensor({5, 4}, rng, false), v = random_tensor({5, 3}, rng, false);
    CHECK(max_abs_diff(scaled_dot_attention(q, k, v).data(), attention_oracle(q, k, v)) < 1e-12);
  }
  SUBCASE("rows of the weight matrix sum to one") {
    AttentionTrace trace;
    scaled_dot_attention(random_tensor({6, 4}, rng, false, 5.0), random_tensor({7, 4}, rng, false, 5.0),
                         random_tensor({7, 2}, rng, false), &trace);
    REQUIRE(trace.weights.size() == 1);
    const Tensor& w = trace.weights[0];
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) s += w.at(i, j);
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
  SUBCASE("width mismatch") {
    CHECK_THROWS_AS(scaled_dot_attention(Tensor::zeros({2, 3}), Tensor::zeros({2, 4}), Tensor::zeros({2, 4})),
                    DimensionError);
    CHECK_THROWS_AS(scaled_dot_attention(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), Tensor::zeros({3, 4})),
                    DimensionError);
  }
}

TEST_CASE("attention config") {
  const AttentionConfig wide{512, 8}, odd{512, 7};
  CHECK_NOTHROW(wide.validate());
  CHECK(wide.head_dim() == 64);
  CHECK_THROWS_AS(odd.validate(), ConfigError);
}

TEST_CASE("multi-head attention") {
  Rng rng(2);
  SUBCASE("one head with identity projections is plain attention") {
    const TransformerLayerConfig c{.attention = {.model_dim = 4, .num_heads = 1}, .ff_dim = 8, .dropout = 0.0};
    ParameterStore p = layer_params(c, 3);
    for (const char* name : {"l.attn.query.weight", "l.attn.key.weight", "l.attn.value.weight", "l.attn.out.weight"}) {
      set_identity(p, name);
    }
    TransformerLayer layer(p, "l.", c);
    Tensor q = random_tensor({3, 4}, rng, false), k = random_tensor({5, 4}, rng, false), v = random_tensor({5, 4}, rng, false);
    CHECK(max_abs_diff(layer.multi_head_attention(q, k, v, false, rng).data(), scaled_dot_attention(q, k, v).data()) <
          1e-14);
  }
  SUBCASE("two heads equal two independent single-head attentions") {
    const TransformerLayerConfig c{.attention = {.model_dim = 4, .num_heads = 2}, .ff_dim = 8, .dropout = 0.0};
    ParameterStore p = layer_params(c, 4);
    for (const auto& [name, t] : p.items()) {
      Tensor h = t;
      for (auto& v : h.mutable_data()) v = rng.normal();
    }
    TransformerLayer layer(p, "l.", c);
    Tensor q = random_tensor({3, 4}, rng, false), k = random_tensor({5, 4}, rng, false), v = random_tensor({5, 4}, rng, false);

    const auto qp = affine(q, p.get("l.attn.query.weight"), p.get("l.attn.query.bias"));
    const auto kp = affine(k, p.get("l.attn.key.weight"), p.get("l.attn.key.bias"));
    const auto vp = affine(v, p.get("l.attn.value.weight"), p.get("l.attn.value.bias"));
    auto columns = [](const std::vector<double>& m, std::size_t rows, std::size_t begin) {
      std::vector<double> out;
      for (std::size_t r = 0; r < rows; ++r) out.insert(out.end(), m.begin() + r * 4 + begin, m.begin() + r * 4 + begin + 2);
      return Tensor::from({rows, 2}, out);
    };
    std::vector<double> heads(3 * 4);
    for (std::size_t h = 0; h < 2; ++h) {
      const auto o = attention_oracle(columns(qp, 3, 2 * h), columns(kp, 5, 2 * h), columns(vp, 5, 2 * h));
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c2 = 0; c2 < 2; ++c2) heads[r * 4 + 2 * h + c2] = o[r * 2 + c2];
    }
    const auto expected = affine(Tensor::from({3, 4}, heads), p.get("l.attn.out.weight"), p.get("l.attn.out.bias"));
    CHECK(max_abs_diff(layer.multi_head_attention(q, k, v, false, rng).data(), expected) < 1e-12);
  }
}

TEST_CASE("transformer block") {
  const TransformerLayerConfig c{.attention = {.model_dim = 8, .num_heads = 2}, .ff_dim = 16, .dropout = 0.0};
  ParameterStore p = layer_params(c, 5);
  TransformerLayer layer(p, "l.", c);
  Rng rng(6);
  SUBCASE("length preserving") {
    for (std::size_t s : {1u, 7u, 50u}) {
      CHECK(layer.forward(random_tensor({s, 8}, rng, false), false, rng).shape() == Shape{s, 8});
    }
  }
  SUBCASE("duplicate frames give identical rows") {
    Tensor a = random_tensor({1, 8}, rng, false), b = random_tensor({1, 8}, rng, false);
    Tensor y = layer.forward(concat({a, b, a}, 0), false, rng);
    for (std::size_t c2 = 0; c2 < 8; ++c2) CHECK(std::abs(y.at(0, c2) - y.at(2, c2)) < 1e-14);
  }
  SUBCASE("permutation equivariant without positions") {
    Tensor x = random_tensor({4, 8}, rng, false);
    const std::vector<std::size_t> perm = {2, 0, 3, 1};
    std::vector<Tensor> rows;
    for (auto r : perm) rows.push_back(slice(x, 0, r, r + 1));
    Tensor y = layer.forward(x, false, rng), yp = layer.forward(concat(rows, 0), false, rng);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c2 = 0; c2 < 8; ++c2) CHECK(std::abs(yp.at(i, c2) - y.at(perm[i], c2)) < 1e-12);
  }
  SUBCASE("zero weights reduce to two layer norms") {
    ParameterStore z = layer_params(c, 7);
    for (const auto& [name, t] : z.items())
      if (name.find("weight") != std::string::npos) fill(z, name, 0.0);
    TransformerLayer zero(z, "l.", c);
    Tensor x = random_tensor({5, 8}, rng, false);
    Tensor g = Tensor::full({8}, 1.0), b = Tensor::zeros({8});
    CHECK(max_abs_diff(zero.forward(x, false, rng).data(), layer_norm(layer_norm(x, g, b), g, b).data()) < 1e-12);
  }
  SUBCASE("inference is deterministic and training with dropout is seeded") {
    const TransformerLayerConfig cd{.attention = {.model_dim = 8, .num_heads = 2}, .ff_dim = 16, .dropout = 0.3};
    ParameterStore pd = layer_params(cd, 8);
    TransformerLayer dl(pd, "l.", cd);
    Tensor x = random_tensor({6, 8}, rng, false);
    Rng r1(1), r2(1), r3(2);
    CHECK(max_abs_diff(dl.forward(x, false, r1).data(), dl.forward(x, false, r3).data()) == 0.0);
    Tensor a = dl.forward(x, true, r1), b = dl.forward(x, true, r2), other = dl.forward(x, true, r3);
    CHECK(max_abs_diff(a.data(), b.data()) == 0.0);
    CHECK(max_abs_diff(a.data(), other.data()) > 0.0);
  }
  SUBCASE("cross attention follows the query length") {
    CHECK(layer.forward(random_tensor({3, 8}, rng, false), random_tensor({9, 8}, rng, false), false, rng).shape() ==
          Shape{3, 8});
  }
  SUBCASE("attention rows sum to one for every head") {
    AttentionTrace trace;
    layer.forward(random_tensor({5, 8}, rng, false, 4.0), false, rng, &trace);
    REQUIRE(trace.weights.size() == 2);
    for (const auto& w : trace.weights)
      for (std::size_t i = 0; i < w.dim(0); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < w.dim(1); ++j) s += w.at(i, j);
        CHECK(std::abs(s - 1.0) < 1e-9);
      }
  }
}

TEST_CASE("positional encoding") {
  Tensor e = positional_encoding(10, 256);
  CHECK(e.shape() == Shape{10, 256});
  for (std::size_t c = 0; c < 256; ++c) CHECK(e.at(0, c) == (c % 2 == 0 ? 0.0 : 1.0));
  for (std::size_t pos : {1u, 2u, 3u}) {
    CHECK(e.at(pos, 0) == doctest::Approx(std::sin(static_cast<double>(pos))).epsilon(1e-14));
    CHECK(e.at(pos, 1) == doctest::Approx(std::cos(static_cast<double>(pos))).epsilon(1e-14));
    const double angle = pos / std::pow(10000.0, 10.0 / 256.0);
    CHECK(e.at(pos, 10) == doctest::Approx(std::sin(angle)).epsilon(1e-12));
    CHECK(e.at(pos, 11) == doctest::Approx(std::cos(angle)).epsilon(1e-12));
  }
  for (double v : e.data()) CHECK(std::abs(v) <= 1.0);
  CHECK_THROWS_AS(positional_encoding(4, 7), ConfigError);
}

TEST_CASE("two-layer stack gradients agree with finite differences") {
  const TransformerLayerConfig c{.attention = {.model_dim = 4, .num_heads = 2}, .ff_dim = 6, .dropout = 0.2};
  ParamSpecs specs;
  TransformerLayer::declare(specs, "a.", c);
  TransformerLayer::declare(specs, "b.", c);
  ParameterStore p(specs, 9);
  TransformerLayer first(p, "a.", c), second(p, "b.", c);
  Rng rng(10);
  Tensor x = random_tensor({3, 4}, rng);
  std::vector<std::pair<std::string, Tensor>> leaves = {{"input", x}};
  for (const auto& item : p.items()) leaves.push_back(item);
  const GradCheckResult r = check_gradients(
      [&] {
        Rng mask(11);
        return project(second.forward(first.forward(x, true, mask), true, mask));
      },
      leaves);
  for (const auto& t : r.tensors) {
    INFO(t.name << " rel=" << t.max_rel_error << " abs=" << t.max_abs_error);
    CHECK(t.passed());
  }
}
