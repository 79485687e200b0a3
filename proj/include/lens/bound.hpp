#pragma once

// PAC-Bayes bound terms on toy networks: per-layer Hessians of the sample
// loss 1/2 (f - y)^2, truncated quadratic forms, KL divergences, the bound
// and its scaling corollary, and numerical checks of the supporting lemmas.

#include "lens/network.hpp"
#include "lens/task.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

namespace lens {

inline constexpr std::size_t kMaxHessianLayerParams = 2000;

struct LayerHessian {
  std::size_t layer_index = 0;
  Eigen::MatrixXd matrix;
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;

  /// Symmetrizes (after checking asymmetry < 1e-8) and eigendecomposes.
  static LayerHessian from_matrix(std::size_t layer_index, const Eigen::MatrixXd& m);
};

/// Hessian of one sample's loss with respect to one layer.
LayerHessian sample_hessian(const ToyNetwork& net, const Sample& sample, std::size_t layer);
/// Hessian of the mean loss over `data` with respect to one layer.
LayerHessian layer_hessian(const ToyNetwork& net, const Dataset& data, std::size_t layer);

/// v^T U max(Lambda, 0) U^T v.
double truncated_psd_quadratic(const LayerHessian& h, const Eigen::VectorXd& v);

/// max over samples of the truncated quadratic form in vec(W_i - W_i^(s)),
/// times `slack` (>= 1).
double hessian_term(const ToyNetwork& net, const Dataset& data, std::size_t layer, double slack = 1.0);
std::vector<double> hessian_terms(const ToyNetwork& net, const Dataset& data, double slack = 1.0);

/// Isotropic: sum ||W_i - W_i^(s)||_F^2 / (2 sigma_i^2).
double kl_divergence(const ToyNetwork& net, const std::vector<double>& sigmas);
/// Full covariance: 1/2 sum vec(dW_i)^T Sigma_i^{-1} vec(dW_i).
double kl_divergence(const ToyNetwork& net, const std::vector<Eigen::MatrixXd>& covariances);

// ---------------------------------------------------------------------------
// Bound values

struct BoundTerms {
  double base = 0.0;
  double hessian_term = 0.0;
  double xi_term = 0.0;
};

struct BoundReport {
  double empirical_loss = 0.0;
  std::vector<double> h;
  std::uint64_t n = 0;
  double C = 0.0;
  double epsilon = 0.0;
  double xi_constant = 0.0;
  double bound_value = 0.0;
  BoundTerms breakdown;
};

/// (1+eps) L + (1+eps) sqrt(C) sum sqrt(h_i) / sqrt(n) + xi n^{-3/4}.
BoundReport evaluate_pac_bound(double empirical_loss, const std::vector<double>& h, std::uint64_t n, double C,
                               double epsilon, double xi_constant = 1.0);

struct ScalingBoundParams {
  double C3 = 0.0;
  double beta3 = 0.0;
  double C2 = 0.0;
  double beta2 = 0.0;

  /// beta3 = (beta2 + 1) / 2, C3 = sqrt(C l C2).
  static ScalingBoundParams derive(double C, std::size_t layers, double C2, double beta2);
};

/// (1+eps) L + C3 n^{-beta3} + xi n^{-3/4}.
double scaling_corollary_bound(double empirical_loss, const ScalingBoundParams& p, double n, double epsilon,
                               double xi_constant = 1.0);

/// Smallest integer n0 >= 1 with C3 n^{-beta3} > xi n^{-3/4} for every n > n0;
/// nullopt when beta3 >= 3/4 and the C3 term never overtakes.
std::optional<double> corollary_crossover(const ScalingBoundParams& p, double xi_constant = 1.0);

// ---------------------------------------------------------------------------
// Lemma checks

struct PowerFit {
  double C = 0.0;
  double decay = 0.0;  // value ~ C n^{-decay}
  double slope = 0.0;  // d log value / d log n = -decay
};

/// Least squares of log value on log n. Needs >= 2 distinct positive n and positive values.
PowerFit fit_power_decay(const std::vector<double>& ns, const std::vector<double>& values);

struct HessianScalingConfig {
  NetworkSpec student;
  RegressionTask source;            // pre-training task
  std::size_t source_samples = 64;
  double pretrain_lr = 0.05;
  std::size_t pretrain_steps = 500;
  RegressionTask target;            // fine-tuning task
  std::vector<std::size_t> sizes;
  double tolerance = 1e-8;          // training mean squared error to reach
  std::size_t max_iters = 500;
  std::uint64_t seed = 0;
};

struct HessianScalingResult {
  std::vector<std::size_t> sizes;
  std::vector<double> max_h;        // max over layers of h_i
  std::vector<double> trace_h;      // tr of the mean-loss Hessian
  PowerFit h_fit;                   // C2_hat, beta2_hat
  PowerFit trace_fit;
};

/// Fine-tunes the pretrained student to `tolerance` on nested target subsets
/// of each size and regresses max_i h_i and tr(H) on n in log-log space.
/// Throws NumericalError when a size fails to converge.
HessianScalingResult hessian_scaling_fit(const HessianScalingConfig& config);

/// Trace of the full Hessian of the mean loss.
double hessian_trace(const ToyNetwork& net, const Dataset& data);

struct GaussNewtonCheck {
  double trace_h = 0.0;
  double gn_trace = 0.0;
  double gap = 0.0;
};

/// Requires mean squared error <= tolerance.
GaussNewtonCheck gauss_newton_trace_check(const ToyNetwork& net, const Dataset& data, double tolerance = 1e-8);

struct CauchySchwarzCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

CauchySchwarzCheck cauchy_schwarz_check(const std::vector<double>& h);

struct WeightDistanceLayer {
  double lhs = 0.0;            // ||W_i - W_i^(s)||_F^2
  double bound = 0.0;          // min(d_i, d_{i-1}) sigma^2 / lambda_min
  double sigma_sq = 0.0;       // max over inputs of ||(W_i - W_i^(s)) x||^2
  double min_input_energy = 0.0;  // smallest eigenvalue of the mean x x^T
  bool holds = false;
};

struct WeightDistanceCheck {
  std::vector<WeightDistanceLayer> layers;
  bool holds = false;
};

/// Layer inputs are taken from the current weights over `data`.
WeightDistanceCheck weight_distance_bound_check(const ToyNetwork& net, const Dataset& data);

}  // namespace lens
