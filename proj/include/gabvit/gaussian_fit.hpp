#pragma once

#include <Eigen/Core>

#include <optional>
#include <stdexcept>
#include <string>

namespace gabvit {

/// A exp(-((x - xc)^2 / (2 sx^2) + (y - yc)^2 / (2 sy^2))), with x the
/// zero-based column index and y the zero-based row index.
struct GaussianParams {
  double amplitude = 0;
  double center_x = 0;
  double center_y = 0;
  double sigma_x = 1;
  double sigma_y = 1;

  Eigen::Matrix<double, 5, 1> to_vector() const;
  static GaussianParams from_vector(const Eigen::Matrix<double, 5, 1>& v);
};

struct GaussianFit {
  GaussianParams params;  // sigmas reported as absolute values
  double r_squared = 0;
  bool converged = false;
  int iterations = 0;
  double final_cost = 0;  // sum of squared (weighted) residuals
};

struct FitProblem {
  Eigen::MatrixXd grid;
  std::optional<Eigen::MatrixXd> weights;
  std::optional<GaussianParams> initial;
  int max_iterations = 200;
  double initial_damping = 1e-3;
  double damping_factor = 10.0;
  double cost_tolerance = 1e-10;   // relative cost change
  double step_tolerance = 1e-8;    // parameter step, infinity norm
  double gradient_tolerance = 1e-12;
};

class FitError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Eigen::MatrixXd evaluate_gaussian(const GaussianParams& params, Eigen::Index rows, Eigen::Index cols);

/// Amplitude max - min, center at the arg-max cell, widths from the second
/// moments of (grid - min) clamped to [0.5, 10 * max(rows, cols)].
GaussianParams initial_guess(const Eigen::MatrixXd& grid);

/// 1 - SS_res / SS_tot. Throws FitError for a constant grid.
double r_squared(const Eigen::MatrixXd& grid, const Eigen::MatrixXd& fitted);

/// Levenberg-Marquardt with an analytic Jacobian. Returns the best parameters
/// seen even when the iteration budget runs out (converged = false).
GaussianFit fit_gaussian(const FitProblem& problem);

/// `name=value` lines in a fixed key order.
std::string to_record(const GaussianFit& fit);

}  // namespace gabvit
