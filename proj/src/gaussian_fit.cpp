#include "gabvit/gaussian_fit.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace gabvit {

namespace {

using Vector5 = Eigen::Matrix<double, 5, 1>;
using Matrix5 = Eigen::Matrix<double, 5, 5>;

void require_fittable(const Eigen::MatrixXd& grid) {
  if (grid.size() == 0) throw FitError("empty grid");
  if (!grid.allFinite()) throw FitError("grid contains non-finite values");
  if (grid.maxCoeff() == grid.minCoeff()) throw FitError("R² undefined for constant input");
}

struct Linearization {
  double cost = 0;
  Matrix5 normal;  // J^T W J
  Vector5 gradient;  // J^T W r
};

// Residuals r = model - data.
double cost_at(const GaussianParams& p, const Eigen::MatrixXd& grid, const Eigen::MatrixXd* weights) {
  const Eigen::MatrixXd r = evaluate_gaussian(p, grid.rows(), grid.cols()) - grid;
  if (weights) return (weights->array() * r.array().square()).sum();
  return r.squaredNorm();
}

Linearization linearize(const GaussianParams& p, const Eigen::MatrixXd& grid, const Eigen::MatrixXd* weights) {
  Linearization lin;
  lin.normal.setZero();
  lin.gradient.setZero();
  const double sx2 = p.sigma_x * p.sigma_x, sy2 = p.sigma_y * p.sigma_y;
  for (Eigen::Index y = 0; y < grid.rows(); ++y) {
    for (Eigen::Index x = 0; x < grid.cols(); ++x) {
      const double dx = static_cast<double>(x) - p.center_x;
      const double dy = static_cast<double>(y) - p.center_y;
      const double e = std::exp(-(dx * dx / (2 * sx2) + dy * dy / (2 * sy2)));
      const double g = p.amplitude * e;
      const double r = g - grid(y, x);
      const double w = weights ? (*weights)(y, x) : 1.0;
      Vector5 j;
      j << e, g * dx / sx2, g * dy / sy2, g * dx * dx / (sx2 * p.sigma_x), g * dy * dy / (sy2 * p.sigma_y);
      lin.cost += w * r * r;
      lin.normal.noalias() += w * j * j.transpose();
      lin.gradient.noalias() += w * r * j;
    }
  }
  return lin;
}

}  // namespace

Vector5 GaussianParams::to_vector() const {
  Vector5 v;
  v << amplitude, center_x, center_y, sigma_x, sigma_y;
  return v;
}

GaussianParams GaussianParams::from_vector(const Vector5& v) { return {v[0], v[1], v[2], v[3], v[4]}; }

Eigen::MatrixXd evaluate_gaussian(const GaussianParams& p, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd out(rows, cols);
  const double sx2 = p.sigma_x * p.sigma_x, sy2 = p.sigma_y * p.sigma_y;
  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      const double dx = static_cast<double>(x) - p.center_x;
      const double dy = static_cast<double>(y) - p.center_y;
      out(y, x) = p.amplitude * std::exp(-(dx * dx / (2 * sx2) + dy * dy / (2 * sy2)));
    }
  }
  return out;
}

GaussianParams initial_guess(const Eigen::MatrixXd& grid) {
  require_fittable(grid);
  const double lo = grid.minCoeff();
  Eigen::Index peak_row = 0, peak_col = 0;
  const double hi = grid.maxCoeff(&peak_row, &peak_col);

  const Eigen::MatrixXd mass = grid.array() - lo;
  const double total = mass.sum();
  double mx = 0, my = 0;
  for (Eigen::Index y = 0; y < grid.rows(); ++y) {
    for (Eigen::Index x = 0; x < grid.cols(); ++x) {
      mx += mass(y, x) * static_cast<double>(x);
      my += mass(y, x) * static_cast<double>(y);
    }
  }
  mx /= total;
  my /= total;
  double vx = 0, vy = 0;
  for (Eigen::Index y = 0; y < grid.rows(); ++y) {
    for (Eigen::Index x = 0; x < grid.cols(); ++x) {
      vx += mass(y, x) * (static_cast<double>(x) - mx) * (static_cast<double>(x) - mx);
      vy += mass(y, x) * (static_cast<double>(y) - my) * (static_cast<double>(y) - my);
    }
  }
  const double upper = 10.0 * static_cast<double>(std::max(grid.rows(), grid.cols()));
  GaussianParams guess;
  guess.amplitude = hi - lo;
  guess.center_x = static_cast<double>(peak_col);
  guess.center_y = static_cast<double>(peak_row);
  guess.sigma_x = std::clamp(std::sqrt(vx / total), 0.5, upper);
  guess.sigma_y = std::clamp(std::sqrt(vy / total), 0.5, upper);
  return guess;
}

double r_squared(const Eigen::MatrixXd& grid, const Eigen::MatrixXd& fitted) {
  if (grid.rows() != fitted.rows() || grid.cols() != fitted.cols()) throw FitError("r_squared: size mismatch");
  const double mean = grid.mean();
  const double ss_tot = (grid.array() - mean).square().sum();
  if (!(ss_tot > 0)) throw FitError("R² undefined for constant input");
  const double ss_res = (grid - fitted).squaredNorm();
  return 1.0 - ss_res / ss_tot;
}

GaussianFit fit_gaussian(const FitProblem& problem) {
  const auto& grid = problem.grid;
  require_fittable(grid);
  if (grid.size() <= 5) throw FitError("grid needs more than 5 cells to fit 5 parameters");
  const Eigen::MatrixXd* weights = nullptr;
  if (problem.weights) {
    if (problem.weights->rows() != grid.rows() || problem.weights->cols() != grid.cols()) {
      throw FitError("weights do not match the grid size");
    }
    weights = &*problem.weights;
  }

  GaussianParams current;
  if (problem.initial) {
    current = *problem.initial;
  } else if (weights && (weights->array() <= 0).any()) {
    // Zero-weight cells must not pick the starting peak.
    const auto live = weights->array() > 0;
    if (!live.any()) throw FitError("all weights are zero");
    const double floor = live.select(grid.array(), std::numeric_limits<double>::infinity()).minCoeff();
    current = initial_guess(live.select(grid.array(), floor).matrix());
  } else {
    current = initial_guess(grid);
  }
  Linearization lin = linearize(current, grid, weights);
  double lambda = problem.initial_damping;
  GaussianFit fit;

  for (int iter = 1; iter <= problem.max_iterations; ++iter) {
    fit.iterations = iter;
    if (lin.gradient.lpNorm<Eigen::Infinity>() < problem.gradient_tolerance) {
      fit.converged = true;
      break;
    }
    Matrix5 damped = lin.normal;
    for (int i = 0; i < 5; ++i) damped(i, i) += lambda * std::max(lin.normal(i, i), 1e-12);
    const Vector5 step = damped.ldlt().solve(-lin.gradient);
    if (!step.allFinite()) {
      lambda *= problem.damping_factor;
      continue;
    }
    const GaussianParams trial = GaussianParams::from_vector(current.to_vector() + step);
    const double trial_cost = cost_at(trial, grid, weights);
    if (std::isfinite(trial_cost) && trial_cost <= lin.cost) {
      const double previous = lin.cost;
      current = trial;
      lin = linearize(current, grid, weights);
      lambda /= problem.damping_factor;
      const double relative_change = previous > 0 ? (previous - lin.cost) / previous : 0.0;
      if (relative_change < problem.cost_tolerance ||
          step.lpNorm<Eigen::Infinity>() < problem.step_tolerance) {
        fit.converged = true;
        break;
      }
    } else {
      lambda *= problem.damping_factor;
      if (step.lpNorm<Eigen::Infinity>() < problem.step_tolerance) {
        // The damped step has collapsed; nothing smaller will help.
        fit.converged = true;
        break;
      }
    }
  }

  current.sigma_x = std::abs(current.sigma_x);
  current.sigma_y = std::abs(current.sigma_y);
  fit.params = current;
  fit.final_cost = lin.cost;
  fit.r_squared = r_squared(grid, evaluate_gaussian(current, grid.rows(), grid.cols()));
  return fit;
}

std::string to_record(const GaussianFit& fit) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "r_squared=%.6f\nsigma_x=%.6f\nsigma_y=%.6f\namplitude=%.6f\ncenter_x=%.6f\ncenter_y=%.6f\n"
                "converged=%s\niterations=%d\n",
                fit.r_squared, fit.params.sigma_x, fit.params.sigma_y, fit.params.amplitude, fit.params.center_x,
                fit.params.center_y, fit.converged ? "true" : "false", fit.iterations);
  return buf;
}

}  // namespace gabvit
