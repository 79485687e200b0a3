#pragma once

// Fitting the rectified law to a loss curve.
//
// Phase 1 holds t fixed on a log-spaced grid (plus t = 0) and solves the
// remaining parameters by Levenberg-Marquardt in log-loss space. Phase 2
// refines every parameter jointly with Nelder-Mead, starting from the best
// phase-1 points and seeded perturbations of the best one; a final
// Levenberg-Marquardt polish runs when the penalty is squared.

#include "lens/scaling_law.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace lens {

enum class OffsetModel { Surrogate, Kernel };

struct FitConfig {
  std::size_t t_grid_points = 32;
  double t_grid_min = 1.0;
  double t_grid_max = 1e6;
  std::size_t restarts = 16;
  Penalty penalty = Penalty::Squared;
  double huber_delta = kDefaultHuberDelta;

  OffsetModel offset = OffsetModel::Surrogate;
  /// Surrogate decay rate; with 0 the offset is constant and t drops out.
  double surrogate_kappa = 0.0;
  /// Hold the surrogate F0 at this value instead of fitting it.
  std::optional<double> fixed_f0;
  /// Kernel, residual and eta for OffsetModel::Kernel.
  std::optional<KernelF> kernel;

  std::uint64_t seed = 0;
  std::size_t max_evaluations = 3000;  // per simplex run
};

struct FitResult {
  RectifiedParams params;
  double objective_value = 0.0;
  double residual_std = 0.0;  // RMS of log-residuals at the optimum
  bool converged = false;
  bool degenerate = false;    // flat curve: only E is identifiable
  std::size_t n_restarts_used = 0;
};

/// Log-spaced t values from the config.
std::vector<double> t_grid(const FitConfig& config);

/// Number of free parameters the config implies.
std::size_t free_parameter_count(const FitConfig& config);

/// Throws InvalidArgument with "insufficient points" when the curve has fewer
/// than max(4, free parameters) observations.
FitResult fit_two_phase(const LossCurve& curve, const FitConfig& config = {});

}  // namespace lens
