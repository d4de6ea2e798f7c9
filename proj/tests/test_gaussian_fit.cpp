#include <doctest.h>

#include "gabvit/gaussian_bias.hpp"
#include "gabvit/gaussian_fit.hpp"
#include "gabvit/rng.hpp"

#include <cmath>
#include <sstream>

using namespace gabvit;

namespace {

Eigen::MatrixXd sampled(double a, double cx, double cy, double sx, double sy, int rows, int cols) {
  Eigen::MatrixXd g(rows, cols);
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      g(y, x) = a * std::exp(-((x - cx) * (x - cx) / (2 * sx * sx) + (y - cy) * (y - cy) / (2 * sy * sy)));
    }
  }
  return g;
}

GaussianFit fit(const Eigen::MatrixXd& g) {
  FitProblem p;
  p.grid = g;
  return fit_gaussian(p);
}

}  // namespace

TEST_SUITE("gaussian_fit") {
  TEST_CASE("evaluate_gaussian matches the closed form") {
    GaussianParams p{2.0, 3.5, 1.0, 1.5, 0.8};
    const auto g = evaluate_gaussian(p, 4, 7);
    CHECK((g - sampled(2.0, 3.5, 1.0, 1.5, 0.8, 4, 7)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(GaussianParams::from_vector(p.to_vector()).sigma_y == 0.8);
  }

  TEST_CASE("isotropic sigma 5 on 27x27 is recovered") {
    const auto r = fit(sampled(1.0, 13, 13, 5, 5, 27, 27));
    CHECK(r.converged);
    CHECK(r.params.sigma_x == doctest::Approx(5).epsilon(1e-6));
    CHECK(r.params.sigma_y == doctest::Approx(5).epsilon(1e-6));
    CHECK(r.params.amplitude == doctest::Approx(1).epsilon(1e-6));
    CHECK(r.params.center_x == doctest::Approx(13).epsilon(1e-6));
    CHECK(r.r_squared > 0.999999);
  }

  TEST_CASE("anisotropic off-centre target, and transposing swaps the axes") {
    const auto g = sampled(0.7, 4.3, 6.1, 1.7, 3.2, 15, 11);
    const auto r = fit(g);
    CHECK(r.converged);
    CHECK(r.params.center_x == doctest::Approx(4.3).epsilon(1e-6));
    CHECK(r.params.center_y == doctest::Approx(6.1).epsilon(1e-6));
    CHECK(r.params.sigma_x == doctest::Approx(1.7).epsilon(1e-6));
    CHECK(r.params.sigma_y == doctest::Approx(3.2).epsilon(1e-6));
    const auto t = fit(g.transpose());
    CHECK(t.params.sigma_x == doctest::Approx(r.params.sigma_y).epsilon(1e-6));
    CHECK(t.params.sigma_y == doctest::Approx(r.params.sigma_x).epsilon(1e-6));
    CHECK(t.params.center_x == doctest::Approx(r.params.center_y).epsilon(1e-6));
  }

  TEST_CASE("scaling the data scales the amplitude; widths do not move") {
    const auto g = sampled(1.0, 5, 5, 2, 2.5, 11, 11);
    const auto a = fit(g), b = fit(g * 3.0);
    CHECK(b.params.amplitude == doctest::Approx(3 * a.params.amplitude).epsilon(1e-6));
    CHECK(b.params.sigma_x == doctest::Approx(a.params.sigma_x).epsilon(1e-6));
  }

  TEST_CASE("translating the peak translates the centre") {
    const auto a = fit(sampled(1.0, 7, 7, 2, 2, 21, 21));
    const auto b = fit(sampled(1.0, 10, 5, 2, 2, 21, 21));
    CHECK(b.params.center_x - a.params.center_x == doctest::Approx(3).epsilon(1e-6));
    CHECK(b.params.center_y - a.params.center_y == doctest::Approx(-2).epsilon(1e-6));
  }

  TEST_CASE("Gaussian bias table slice recovers A^2 and sigma") {
    NoGradGuard g;
    const auto table = gaussian_table(Tensor64::scalar(1.3), Tensor64::scalar(4.0), 14, 14);
    const auto r = fit(table.values.matrix());
    CHECK(r.converged);
    CHECK(r.params.amplitude == doctest::Approx(1.69).epsilon(1e-6));
    CHECK(r.params.sigma_x == doctest::Approx(std::sqrt(16 + 1e-6)).epsilon(1e-6));
    CHECK(r.params.sigma_y == doctest::Approx(std::sqrt(16 + 1e-6)).epsilon(1e-6));
    // 1-based table centre (14, 14) is zero-based (13, 13).
    CHECK(r.params.center_x == doctest::Approx(13).epsilon(1e-9));
  }

  TEST_CASE("pure noise fits poorly") {
    Rng rng(4);
    Eigen::MatrixXd g(20, 20);
    for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = rng.uniform();
    const auto r = fit(g);
    CHECK(r.r_squared < 0.5);
  }

  TEST_CASE("initial guess") {
    const Eigen::MatrixXd g = sampled(2.0, 3, 2, 1.0, 1.0, 5, 7) + Eigen::MatrixXd::Constant(5, 7, 0.5);
    const auto p = initial_guess(g);
    CHECK(p.amplitude == doctest::Approx(2.0 - (g.minCoeff() - 0.5)).epsilon(1e-12));
    CHECK(p.center_x == 3);
    CHECK(p.center_y == 2);
    CHECK(p.sigma_x >= 0.5);
    Eigen::MatrixXd spike = Eigen::MatrixXd::Zero(5, 5);
    spike(1, 3) = 1;
    const auto s = initial_guess(spike);
    CHECK(s.sigma_x == 0.5);
    CHECK(s.sigma_y == 0.5);
    CHECK(s.center_x == 3);
    CHECK(s.center_y == 1);
  }

  TEST_CASE("r_squared against a direct computation") {
    Rng rng(9);
    Eigen::MatrixXd g(6, 5), f(6, 5);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      g(i) = rng.normal();
      f(i) = g(i) + 0.1 * rng.normal();
    }
    double mean = 0;
    for (Eigen::Index i = 0; i < g.size(); ++i) mean += g(i);
    mean /= double(g.size());
    double res = 0, tot = 0;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      res += (g(i) - f(i)) * (g(i) - f(i));
      tot += (g(i) - mean) * (g(i) - mean);
    }
    CHECK(r_squared(g, f) == doctest::Approx(1 - res / tot).epsilon(1e-14));
    CHECK(r_squared(g, g) == 1.0);
    CHECK_THROWS_WITH_AS(r_squared(Eigen::MatrixXd::Ones(3, 3), Eigen::MatrixXd::Ones(3, 3)),
                         "R² undefined for constant input", FitError);
  }

  TEST_CASE("cost never increases with more iterations") {
    Eigen::MatrixXd g = sampled(1.0, 6.2, 4.7, 2.2, 1.4, 12, 12);
    Rng rng(2);
    for (Eigen::Index i = 0; i < g.size(); ++i) g(i) += 0.01 * rng.normal();
    double previous = std::numeric_limits<double>::infinity();
    for (int budget = 1; budget <= 12; ++budget) {
      FitProblem p;
      p.grid = g;
      p.max_iterations = budget;
      const auto r = fit_gaussian(p);
      CHECK(r.final_cost <= previous);
      previous = r.final_cost;
    }
  }

  TEST_CASE("weights down-weight an outlier") {
    auto g = sampled(1.0, 5, 5, 2, 2, 11, 11);
    g(0, 0) = 5;
    FitProblem p;
    p.grid = g;
    p.weights = Eigen::MatrixXd::Ones(11, 11);
    (*p.weights)(0, 0) = 0;
    const auto r = fit_gaussian(p);
    CHECK(r.params.sigma_x == doctest::Approx(2).epsilon(1e-6));
  }

  TEST_CASE("rejected inputs") {
    CHECK_THROWS_AS(fit(Eigen::MatrixXd::Zero(2, 2)), FitError);
    CHECK_THROWS_AS(fit(Eigen::MatrixXd::Constant(4, 4, 3.0)), FitError);
    Eigen::MatrixXd bad = sampled(1, 2, 2, 1, 1, 5, 5);
    bad(1, 1) = std::nan("");
    CHECK_THROWS_AS(fit(bad), FitError);
  }

  TEST_CASE("record has eight keys in fixed order") {
    const auto r = fit(sampled(1.0, 4, 4, 1.5, 1.5, 9, 9));
    std::istringstream in(to_record(r));
    std::vector<std::string> keys;
    for (std::string line; std::getline(in, line);) keys.push_back(line.substr(0, line.find('=')));
    const std::vector<std::string> expected{"r_squared", "sigma_x",  "sigma_y",   "amplitude",
                                            "center_x",  "center_y", "converged", "iterations"};
    CHECK(keys == expected);
  }
}
