#pragma once

// Loss-vs-data-size laws: the two-variable power law, the fixed-model law and
// the rectified law L(D) = B / (F(Theta, t) + D^beta) + E whose offset F comes
// either from an actual kernel flow or from a decaying surrogate.

#include "lens/ntk.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace lens {

struct PowerLawParams {
  double A = 1.0;
  double B = 1.0;
  double alpha = 1.0;
  double alpha_N = 1.0;
  double beta = 1.0;
};

struct FixedModelLawParams {
  double B = 1.0;
  double E = 0.0;
  double alpha = 1.0;
  double beta = 1.0;
};

/// F(t) = f0 * exp(-kappa t). Used for recorded curves with no network behind them.
struct SurrogateF {
  double f0 = 0.0;
  double kappa = 0.0;
};

/// F(t) = ||exp(-eta Theta t) r0||^2 from an actual kernel.
struct KernelF {
  std::shared_ptr<const KernelMatrix> kernel;
  Eigen::VectorXd residual;
  double eta = 1.0;
};

using FMode = std::variant<SurrogateF, KernelF>;

struct RectifiedParams {
  double B = 1.0;
  double E = 0.0;
  double beta = 1.0;
  double t = 0.0;
  FMode f_mode = SurrogateF{};
};

/// Throws InvalidArgument on B <= 0, E < 0, beta <= 0, t < 0 or a bad F mode.
void validate(const RectifiedParams& p);

/// The offset F evaluated at time t.
double evaluate_f(const FMode& mode, double t);
inline double ntk_term(const RectifiedParams& p) { return evaluate_f(p.f_mode, p.t); }

double predict_power_law(const PowerLawParams& p, double N, double D);
double predict_fixed_law(const FixedModelLawParams& p, double D);
double predict_rectified(const RectifiedParams& p, double D);

/// log(e^a + e^b), with log(e^a + 0) = a when b = -inf.
double log_sum_exp(double a, double b);

/// log L(D) computed as LSE(log B - log(F + D^beta), log E).
double log_predict_rectified(const RectifiedParams& p, double D);

// ---------------------------------------------------------------------------
// Observations

struct LossObservation {
  std::uint64_t dataset_size = 0;
  double test_loss = 0.0;
  std::optional<std::uint64_t> steps;
};

/// Observations sorted by strictly increasing dataset size.
struct LossCurve {
  std::string model_id;
  std::vector<LossObservation> observations;
};

/// Sorts by size and validates: positive sizes and losses, no repeated size.
LossCurve make_curve(std::string model_id, std::vector<LossObservation> observations);

// ---------------------------------------------------------------------------
// Objective

enum class Penalty { Squared, Huber };

inline constexpr double kDefaultHuberDelta = 1e-3;

/// rho(r): r^2, or the Huber form r^2 for |r| <= delta, 2 delta |r| - delta^2 beyond.
double penalty(double residual, Penalty shape, double huber_delta = kDefaultHuberDelta);

/// sum_i rho(log L_pred(D_i) - log L(D_i)).
double lse_objective(const RectifiedParams& p, const LossCurve& curve, Penalty shape = Penalty::Squared,
                     double huber_delta = kDefaultHuberDelta);

// ---------------------------------------------------------------------------
// Phases

enum class Phase { PrePower, Power };

/// D* = F^{1/beta}: the size at which D^beta equals the offset F. Zero when F = 0.
double transition_point(const RectifiedParams& p);
Phase classify_phase(const RectifiedParams& p, double D);

const char* to_string(Phase phase);

}  // namespace lens
