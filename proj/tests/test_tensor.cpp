// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "deeptrf/checkpoint.hpp"
#include "deeptrf/errors.hpp"
#include "deeptrf/ops.hpp"
#include "deeptrf/params.hpp"
#include "test_util.hpp"

using namespace deeptrf;
using deeptrf::testing::project;
using deeptrf::testing::random_tensor;

namespace {

void require_gradcheck(const std::function<Tensor()>& f, const std::vector<std::pair<std::string, Tensor>>& leaves) {
  const GradCheckResult r = check_gradients(f, leaves);
  for (const auto& t : r.tensors) {
    INFO(t.name << " max_rel=" << t.max_rel_error << " max_abs=" << t.max_abs_error);
    CHECK(t.passed());
  }
}

}  // namespace

TEST_CASE("tensor construction enforces shape and data agreement") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::from({0, 2}, {}), DimensionError);
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == shape_numel(t.shape()));
  CHECK(t.at(1, 2) == 6);
}

TEST_CASE("matmul") {
  SUBCASE("identity") {
    Tensor y = matmul(Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::from({2, 2}, {1, 2, 3, 4}));
    CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{1, 2, 3, 4});
  }
  SUBCASE("projection row") {
    Tensor y = matmul(Tensor::from({2, 2}, {1, 0, 0, 0}), Tensor::from({2, 1}, {5, 7}));
    CHECK(y.at(0, 0) == 5);
    CHECK(y.at(1, 0) == 0);
  }
  SUBCASE("triple-loop oracle") {
    Rng rng(3);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    Tensor y = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 4; ++k) acc += a.data()[i * 4 + k] * b.data()[k * 2 + j];
        CHECK(std::abs(y.at(i, j) - acc) < 1e-12);
      }
  }
  SUBCASE("mismatch names both shapes") {
    try {
      matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2,3]") != std::string::npos);
    }
  }
}

TEST_CASE("softmax") {
  SUBCASE("symmetry") {
    Tensor y = softmax(Tensor::from({1, 2}, {0, 0}), 1);
    CHECK(y.data()[0] == doctest::Approx(0.5));
    CHECK(y.data()[1] == doctest::Approx(0.5));
  }
  SUBCASE("large logits do not overflow") {
    Tensor y = softmax(Tensor::from({1, 2}, {1000, 0}), 1);
    CHECK(y.data()[0] == 1.0);
    CHECK(std::isfinite(y.data()[1]));
    CHECK(y.data()[1] < 1e-300);
  }
  SUBCASE("direct formula") {
    Tensor y = softmax(Tensor::from({1, 3}, {1, 2, 3}), 1);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(y.data()[i] - std::exp(i + 1.0) / z) < 1e-12);
  }
  SUBCASE("rows sum to one on either axis") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      Tensor x = random_tensor({4, 6}, rng, false, 10.0);
      for (std::size_t axis : {0u, 1u}) {
        Tensor y = softmax(x, axis);
        const std::size_t rows = axis == 1 ? 4 : 6, cols = axis == 1 ? 6 : 4;
        for (std::size_t r = 0; r < rows; ++r) {
          double s = 0.0;
          for (std::size_t c = 0; c < cols; ++c) s += axis == 1 ? y.at(r, c) : y.at(c, r);
          CHECK(std::abs(s - 1.0) < 1e-9);
        }
      }
    }
  }
  SUBCASE("NaN rejected") {
    CHECK_THROWS_AS(softmax(Tensor::from({1, 2}, {NAN, 0}), 1), InputError);
  }
}

TEST_CASE("layer_norm") {
  Tensor gain = Tensor::full({4}, 1.0), bias = Tensor::zeros({4});
  SUBCASE("constant input collapses to bias") {
    Tensor y = layer_norm(Tensor::from({1, 4}, {5, 5, 5, 5}), gain, bias);
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("two-point standardization") {
    Tensor y = layer_norm(Tensor::from({1, 2}, {1, 3}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 0.0);
    CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("recomputed moments") {
    Rng rng(11);
    Tensor y = layer_norm(random_tensor({1, 4}, rng, false, 3.0), gain, bias, 1e-5);
    double mu = 0.0, var = 0.0;
    for (double v : y.data()) mu += v / 4;
    for (double v : y.data()) var += (v - mu) * (v - mu) / 4;
    CHECK(std::abs(mu) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-5 * 4);
  }
  SUBCASE("width one rejected") {
    CHECK_THROWS_AS(layer_norm(Tensor::zeros({2, 1}), Tensor::full({1}, 1.0), Tensor::zeros({1})), DimensionError);
  }
}

TEST_CASE("backward") {
  Rng rng(13);
  SUBCASE("sum gives ones") {
    Tensor w = random_tensor({3, 2}, rng);
    sum(w).backward();
    for (double g : w.grad()) CHECK(g == 1.0);
  }
  SUBCASE("sum of squares gives 2w") {
    Tensor w = random_tensor({5}, rng);
    sum(mul(w, w)).backward();
    for (std::size_t i = 0; i < 5; ++i) CHECK(w.grad()[i] == doctest::Approx(2 * w.data()[i]).epsilon(1e-14));
  }
  SUBCASE("non-scalar loss is a contract error") {
    Tensor w = random_tensor({3}, rng);
    CHECK_THROWS_AS(w.backward(), ContractError);
  }
  SUBCASE("shared subexpression visited once") {
    Tensor w = random_tensor({2}, rng);
    Tensor h = scale(w, 3.0);
    sum(add(h, h)).backward();
    for (double g : w.grad()) CHECK(g == doctest::Approx(6.0));
  }
  SUBCASE("grad matches value shape") {
    Tensor w = random_tensor({2, 3}, rng);
    sum(relu(w)).backward();
    CHECK(w.grad().size() == w.numel());
  }
}

TEST_CASE("primitive gradients agree with finite differences") {
  Rng rng(17);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng), c = random_tensor({3, 4}, rng);
  Tensor bias = random_tensor({4}, rng), gain = random_tensor({4}, rng);
  SUBCASE("matmul") { require_gradcheck([&] { return project(matmul(a, b)); }, {{"a", a}, {"b", b}}); }
  SUBCASE("transpose") { require_gradcheck([&] { return project(transpose(a)); }, {{"a", a}}); }
  SUBCASE("add sub mul") {
    require_gradcheck([&] { return project(mul(add(a, c), sub(a, c))); }, {{"a", a}, {"c", c}});
  }
  SUBCASE("scale and mean") { require_gradcheck([&] { return mean(scale(mul(a, a), 0.5)); }, {{"a", a}}); }
  SUBCASE("add_bias") { require_gradcheck([&] { return project(add_bias(a, bias)); }, {{"a", a}, {"bias", bias}}); }
  SUBCASE("relu and leaky_relu") {
    require_gradcheck([&] { return project(add(relu(a), leaky_relu(c, 0.1))); }, {{"a", a}, {"c", c}});
  }
  SUBCASE("softmax and log_softmax") {
    require_gradcheck([&] { return project(add(softmax(a, 1), log_softmax(c, 0))); }, {{"a", a}, {"c", c}});
  }
  SUBCASE("layer_norm") {
    require_gradcheck([&] { return project(layer_norm(a, gain, bias)); }, {{"a", a}, {"gain", gain}, {"bias", bias}});
  }
  SUBCASE("linear") {
    Tensor bb = random_tensor({2}, rng);
    require_gradcheck([&] { return project(linear(a, b, bb)); }, {{"a", a}, {"b", b}, {"bias", bb}});
  }
  SUBCASE("concat and slice") {
    require_gradcheck([&] { return project(slice(concat({a, c}, 0), 0, 2, 5)); }, {{"a", a}, {"c", c}});
    require_gradcheck([&] { return project(slice(concat({a, c}, 1), 1, 3, 7)); }, {{"a", a}, {"c", c}});
  }
  SUBCASE("reshape and swap_leading_axes") {
    Tensor x = random_tensor({2, 3, 4}, rng);
    require_gradcheck([&] { return project(reshape(swap_leading_axes(x), {3, 8})); }, {{"x", x}});
  }
  SUBCASE("weighted_sum") {
    Tensor s1 = random_tensor({1}, rng), s2 = random_tensor({1}, rng);
    const std::vector<double> w = {0.25, -2.0};
    require_gradcheck(
        [&] {
          const std::vector<Tensor> parts = {sum(mul(s1, s1)), sum(s2)};
          return weighted_sum(parts, w);
        },
        {{"s1", s1}, {"s2", s2}});
  }
  SUBCASE("dropout with a fixed mask") {
    require_gradcheck(
        [&] {
          Rng mask(5);
          return project(dropout(a, 0.3, true, mask));
        },
        {{"a", a}});
  }
  SUBCASE("conv2d and max_pool2d") {
    Tensor x = random_tensor({2, 6, 4}, rng), w = random_tensor({3, 2, 3, 3}, rng), cb = random_tensor({3}, rng);
    require_gradcheck([&] { return project(max_pool2d(relu(conv2d(x, w, cb)), 2, 2)); },
                      {{"x", x}, {"w", w}, {"b", cb}});
  }
}

TEST_CASE("kinks inside the finite-difference step") {
  // 3e-6 sits within one step of the ReLU hinge; 0.5 does not.
  Tensor x = Tensor::from({2}, {3e-6, 0.5}, true);
  const auto loss = [&] { return sum(relu(x)); };
  SUBCASE("naive central differences disagree at the hinge") {
    const GradCheckResult r = check_gradients(loss, {{"x", x}});
    CHECK(r.tensors.front().failures == 1);
  }
  SUBCASE("branch switches are detected and set aside") {
    const GradCheckResult r = check_gradients(loss, {{"x", x}}, {.skip_branch_switches = true});
    CHECK(r.tensors.front().branch_switches == 1);
    CHECK(r.tensors.front().compared() == 1);
    CHECK(r.passed());
  }
  SUBCASE("max-pool winner changes are detected") {
    Tensor m = Tensor::from({1, 1, 2}, {1.0, 1.0 + 4e-6}, true);
    const GradCheckResult r =
        check_gradients([&] { return sum(max_pool2d(m, 1, 2)); }, {{"m", m}}, {.skip_branch_switches = true});
    CHECK(r.tensors.front().branch_switches == 2);
  }
  SUBCASE("fingerprint is stable across identical evaluations") {
    std::uint64_t a = 0, b = 0;
    {
      BranchRecorder rec;
      loss();
      a = rec.fingerprint();
    }
    {
      BranchRecorder rec;
      loss();
      b = rec.fingerprint();
    }
    CHECK(a == b);
  }
}

TEST_CASE("dropout") {
  Rng rng(19);
  Tensor x = random_tensor({4, 5}, rng, false);
  SUBCASE("rate zero is identity") {
    Tensor y = dropout(x, 0.0, true, rng);
    CHECK(deeptrf::testing::max_abs_diff(x.data(), y.data()) == 0.0);
  }
  SUBCASE("inference is identity at any rate") {
    Tensor y = dropout(x, 0.9, false, rng);
    CHECK(deeptrf::testing::max_abs_diff(x.data(), y.data()) == 0.0);
  }
  SUBCASE("kept entries are rescaled by the keep probability") {
    Tensor y = dropout(x, 0.5, true, rng);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      CHECK((y.data()[i] == 0.0 || std::abs(y.data()[i] - 2.0 * x.data()[i]) < 1e-15));
    }
  }
  SUBCASE("invalid rate") { CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ConfigError); }
  SUBCASE("seeded mask is reproducible") {
    Rng r1(7), r2(7);
    CHECK(deeptrf::testing::max_abs_diff(dropout(x, 0.4, true, r1).data(), dropout(x, 0.4, true, r2).data()) == 0.0);
  }
}

TEST_CASE("concat, slice and pooling shapes") {
  Tensor a = Tensor::from({1, 2}, {1, 2}), b = Tensor::from({2, 2}, {3, 4, 5, 6});
  Tensor c = concat({a, b}, 0);
  CHECK(c.shape() == Shape{3, 2});
  CHECK(c.at(2, 1) == 6);
  CHECK_THROWS_AS(concat({a, Tensor::zeros({1, 3})}, 0), DimensionError);
  CHECK(slice(c, 0, 1, 2).at(0, 0) == 3);
  Tensor p = max_pool2d(Tensor::from({1, 2, 2}, {1, 4, 3, 2}), 2, 2);
  CHECK(p.numel() == 1);
  CHECK(p.data()[0] == 4);
}

TEST_CASE("checkpoint archive round-trips bit-exactly") {
  Rng rng(23);
  TensorArchive archive;
  archive["alpha"] = to_named(random_tensor({3, 2}, rng, false));
  archive["beta/\xc3\xa9"] = {{1}, {-0.0}};
  archive["gamma"] = {{2}, {1e-310, std::nextafter(1.0, 2.0)}};
  std::stringstream buf;
  write_archive(buf, archive);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 4) == "RATN");
  std::stringstream in(bytes);
  const TensorArchive back = read_archive(in);
  REQUIRE(back.size() == archive.size());
  for (const auto& [name, arr] : archive) {
    const auto& other = back.at(name);
    CHECK(other.shape == arr.shape);
    CHECK(std::memcmp(other.data.data(), arr.data.data(), arr.data.size() * sizeof(double)) == 0);
  }
  std::stringstream bad("XXXX");
  CHECK_THROWS(read_archive(bad));
}

TEST_CASE("parameter initialization is keyed by name") {
  ParamSpecs small = {{"x", {3, 4}, Init::FanInUniform, 3}};
  ParamSpecs large = {{"y", {8}, Init::FanInUniform, 8}, {"x", {3, 4}, Init::FanInUniform, 3}, {"g", {4}, Init::Ones}};
  ParameterStore a(small, 42), b(large, 42);
  CHECK(deeptrf::testing::max_abs_diff(a.get("x").data(), b.get("x").data()) == 0.0);
  for (double v : a.get("x").data()) CHECK(std::abs(v) <= 1.0 / std::sqrt(3.0));
  for (double v : b.get("g").data()) CHECK(v == 1.0);
  CHECK(b.count() == 8 + 12 + 4);
  CHECK(count_parameters(large) == b.count());
}

TEST_CASE("replaying a graph with the same seed is bit-identical") {
  auto run = [] {
    Rng rng(31);
    Tensor x = random_tensor({5, 6}, rng);
    Tensor w = random_tensor({6, 6}, rng);
    Tensor y = dropout(relu(matmul(x, w)), 0.2, true, rng);
    Tensor loss = sum(log_softmax(y, 1));
    loss.backward();
    return std::pair{loss.item(), std::vector<double>(w.grad().begin(), w.grad().end())};
  };
  const auto [l1, g1] = run();
  const auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}
