#pragma once

// Small dense optimizers used by the curve fitter.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>

namespace lens::optim {

/// Fills residuals r(x); fills J when non-null (rows = residuals, cols = x).
/// Returning false marks x as infeasible.
using ResidualFn = std::function<bool(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J)>;

struct LmOptions {
  std::size_t max_iterations = 200;
  double gradient_tol = 1e-14;
  double step_tol = 1e-14;
  double initial_damping = 1e-3;
};

struct LmResult {
  Eigen::VectorXd x;
  double cost = 0.0;  // sum of squared residuals
  std::size_t iterations = 0;
  bool converged = false;
};

/// Levenberg-Marquardt with multiplicative damping (Marquardt scaling).
LmResult levenberg_marquardt(const ResidualFn& fn, Eigen::VectorXd x0, const LmOptions& opts = {});

/// Central-difference Jacobian of a residual function without analytic derivatives.
bool numeric_jacobian(const ResidualFn& fn, const Eigen::VectorXd& x, Eigen::MatrixXd& J, double rel_step = 1e-6);

using ObjectiveFn = std::function<double(const Eigen::VectorXd& x)>;

struct NelderMeadOptions {
  std::size_t max_evaluations = 4000;
  double f_tol = 1e-15;  // stop when best/worst values agree
  double x_tol = 1e-10;  // and the simplex is this small
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  std::size_t evaluations = 0;
  bool converged = false;
};

/// Downhill simplex. `step` sets the initial simplex edge per coordinate.
/// Non-finite objective values are treated as +infinity.
NelderMeadResult nelder_mead(const ObjectiveFn& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& step,
                             const NelderMeadOptions& opts = {});

}  // namespace lens::optim
