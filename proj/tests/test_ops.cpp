#include <doctest.h>

#include "gabvit/gradcheck.hpp"
#include "gabvit/ops.hpp"

#include <cmath>

using namespace gabvit;

TEST_SUITE("ops") {
  TEST_CASE("matmul hand cases and shape errors") {
    NoGradGuard g;
    auto eye = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
    auto b = Tensor::from_vector({2, 2}, {3, 4, 5, 6});
    CHECK((matmul(eye, b).data() == b.data()).all());
    auto r = matmul(Tensor::from_vector({1, 2}, {1, 2}), Tensor::from_vector({2, 1}, {3, 4}));
    CHECK(r.item() == 11.0f);
    CHECK_THROWS_AS(matmul(eye, Tensor::zeros({3, 2})), ShapeError);
  }

  TEST_CASE("matmul gradient of sum(a b) with respect to a is b's row sums broadcast") {
    TapeScope scope;
    auto a = Tensor::from_vector({3, 4}, std::vector<float>(12, 0.5f), true);
    auto b = Tensor::from_vector({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    backward(sum(matmul(a, b)));
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t k = 0; k < 4; ++k) CHECK(a.grad()[i * 4 + k] == b[2 * k] + b[2 * k + 1]);
    }
  }

  TEST_CASE("softmax values, row sums and translation invariance") {
    NoGradGuard g;
    auto u = softmax_lastdim(Tensor::from_vector({3}, {0, 0, 0}));
    for (int i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3));

    auto s = softmax_lastdim(Tensor::from_vector({3}, {1, 2, 3}));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(s[i] - std::exp(i + 1.0) / z) < 1e-7);

    auto x = Tensor::from_vector({2, 4}, {0.3f, -1.2f, 2.0f, 0.7f, 1.1f, 0.0f, -0.4f, 0.9f});
    auto a = softmax_lastdim(x);
    auto b = softmax_lastdim(add_scalar(x, 3.0f));
    CHECK((a.data() - b.data()).abs().maxCoeff() <= 1e-7);
    CHECK(std::abs(a.matrix().row(0).sum() - 1) <= 1e-6);
    CHECK(std::abs(a.matrix().row(1).sum() - 1) <= 1e-6);
  }

  TEST_CASE("softmax rejects non-finite input") {
    NoGradGuard g;
    CHECK_THROWS_AS(softmax_lastdim(Tensor::from_vector({2}, {1, NAN})), std::domain_error);
    CHECK_THROWS_AS(softmax_lastdim(Tensor::from_vector({2}, {INFINITY, 0})), std::domain_error);
  }

  TEST_CASE("layernorm reference cases") {
    NoGradGuard g;
    auto ones = Tensor::full({2}, 1.0f), zeros = Tensor::zeros({2});
    auto c = layernorm(Tensor::from_vector({1, 2}, {3, 3}), ones, zeros, 1e-6f);
    CHECK((c.data() == 0.0f).all());
    auto r = layernorm(Tensor::from_vector({1, 2}, {1, -1}), ones, zeros, 1e-12f);
    CHECK(r[0] == doctest::Approx(1).epsilon(1e-6));
    CHECK(r[1] == doctest::Approx(-1).epsilon(1e-6));
    CHECK_THROWS(layernorm(Tensor::zeros({2, 0}), Tensor::zeros({0}), Tensor::zeros({0}), 1e-6f));
  }

  TEST_CASE("relu, gelu and cross entropy values") {
    NoGradGuard g;
    auto r = relu(Tensor::from_vector({3}, {-1, 0, 2}));
    CHECK(r[0] == 0.0f);
    CHECK(r[1] == 0.0f);
    CHECK(r[2] == 2.0f);

    const double x = 0.8;
    const double ref = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
    CHECK(gelu(Tensor64::from_vector({1}, {x})).item() == doctest::Approx(ref).epsilon(1e-14));

    auto logits = Tensor64::from_vector({3}, {0.5, -1, 2});
    const double lse = std::log(std::exp(0.5) + std::exp(-1.0) + std::exp(2.0));
    CHECK(cross_entropy(logits, 1).item() == doctest::Approx(lse + 1).epsilon(1e-14));
    CHECK_THROWS(cross_entropy(logits, 3));
  }

  TEST_CASE("mean over copies returns the copied vector") {
    NoGradGuard g;
    auto v = Tensor::from_vector({5, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3});
    auto m = mean_over_dim(v, 0);
    REQUIRE(m.shape() == Shape{3});
    CHECK(m[0] == 1.0f);
    CHECK(m[2] == 3.0f);
  }

  TEST_CASE("add rejects mismatched shapes") {
    NoGradGuard g;
    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
    CHECK_THROWS_AS(mul(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
    CHECK_THROWS_AS(reshape(Tensor::zeros({2, 3}), {4}), ShapeError);
  }

  TEST_CASE("gather scatter-adds repeated indices") {
    TapeScope scope;
    auto x = Tensor::from_vector({3}, {1, 2, 3}, true);
    backward(sum(gather(x, make_indices({2, 2, 0, 2}), {4})));
    CHECK(x.grad()[0] == 1.0f);
    CHECK(x.grad()[1] == 0.0f);
    CHECK(x.grad()[2] == 3.0f);
  }

  TEST_CASE("transpose_last_two moves entries") {
    NoGradGuard g;
    auto t = transpose_last_two(Tensor::from_vector({1, 2, 3}, {1, 2, 3, 4, 5, 6}));
    REQUIRE(t.shape() == Shape{1, 3, 2});
    CHECK(t[1] == 4.0f);
    CHECK(t[2] == 2.0f);
  }

  TEST_CASE("every engine op passes its finite-difference audit across seeds") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      for (const auto& audit : op_audits()) {
        const auto r = audit.run(seed, GradTolerance{});
        INFO(audit.name << " seed " << seed << " rel " << r.max_rel_error);
        CHECK(r.passed);
      }
    }
  }

  TEST_CASE("gelu gradient at 17 random points within 1e-4 absolute") {
    TapeScope scope;
    std::vector<float> xs;
    for (int i = 0; i < 17; ++i) xs.push_back(-3.0f + 0.37f * static_cast<float>(i));
    auto x = Tensor::from_vector({17}, xs, true);
    backward(sum(gelu(x)));
    for (int i = 0; i < 17; ++i) {
      const double v = xs[static_cast<std::size_t>(i)], h = 1e-3;
      const auto f = [](double t) {
        return 0.5 * t * (1 + std::tanh(std::sqrt(2 / M_PI) * (t + 0.044715 * t * t * t)));
      };
      CHECK(std::abs(x.grad()[i] - (f(v + h) - f(v - h)) / (2 * h)) <= 1e-4);
    }
  }
}
