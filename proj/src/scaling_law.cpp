#include "lens/scaling_law.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lens {

namespace {

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string(what) + " must be positive");
}

}  // namespace

void validate(const RectifiedParams& p) {
  require_positive(p.B, "rectified law: B");
  require_positive(p.beta, "rectified law: beta");
  if (!(p.E >= 0.0) || !std::isfinite(p.E)) throw InvalidArgument("rectified law: E must be nonnegative");
  if (!(p.t >= 0.0) || !std::isfinite(p.t)) throw InvalidArgument("rectified law: t must be nonnegative");
  if (const auto* s = std::get_if<SurrogateF>(&p.f_mode)) {
    if (!(s->f0 >= 0.0) || !(s->kappa >= 0.0))
      throw InvalidArgument("rectified law: surrogate F0 and kappa must be nonnegative");
  } else {
    const auto& k = std::get<KernelF>(p.f_mode);
    if (!k.kernel) throw InvalidArgument("rectified law: kernel-backed F without a kernel");
    if (k.residual.size() != k.kernel->dim())
      throw InvalidArgument("rectified law: kernel/residual dimension mismatch");
  }
}

double evaluate_f(const FMode& mode, double t) {
  if (const auto* s = std::get_if<SurrogateF>(&mode)) return s->kappa == 0.0 ? s->f0 : s->f0 * std::exp(-s->kappa * t);
  const auto& k = std::get<KernelF>(mode);
  if (!k.kernel) throw InvalidArgument("rectified law: kernel-backed F without a kernel");
  return ntk_test_loss(*k.kernel, k.residual, k.eta, t);
}

double predict_power_law(const PowerLawParams& p, double N, double D) {
  require_positive(N, "power law: N");
  require_positive(D, "power law: D");
  return std::pow(p.A / std::pow(N, p.alpha_N) + p.B / std::pow(D, p.beta), p.alpha);
}

double predict_fixed_law(const FixedModelLawParams& p, double D) {
  require_positive(D, "fixed-model law: D");
  return std::pow(p.B / std::pow(D, p.beta) + p.E, p.alpha);
}

double predict_rectified(const RectifiedParams& p, double D) {
  require_positive(D, "rectified law: D");
  validate(p);
  const double denom = ntk_term(p) + std::pow(D, p.beta);
  if (!(denom > 0.0)) throw NumericalError("rectified law: F + D^beta is not positive");
  return p.B / denom + p.E;
}

double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

double log_predict_rectified(const RectifiedParams& p, double D) {
  require_positive(D, "rectified law: D");
  validate(p);
  const double F = ntk_term(p);
  const double log_pow = p.beta * std::log(D);
  const double log_denom = F > 0.0 ? log_sum_exp(std::log(F), log_pow) : log_pow;
  const double log_e = p.E > 0.0 ? std::log(p.E) : -std::numeric_limits<double>::infinity();
  return log_sum_exp(std::log(p.B) - log_denom, log_e);
}

LossCurve make_curve(std::string model_id, std::vector<LossObservation> observations) {
  for (const auto& o : observations) {
    if (o.dataset_size == 0) throw InvalidArgument("curve '" + model_id + "': dataset size must be positive");
    if (!(o.test_loss > 0.0) || !std::isfinite(o.test_loss))
      throw InvalidArgument("curve '" + model_id + "': test loss must be positive");
    if (o.steps && *o.steps == 0) throw InvalidArgument("curve '" + model_id + "': steps must be positive");
  }
  std::sort(observations.begin(), observations.end(),
            [](const auto& a, const auto& b) { return a.dataset_size < b.dataset_size; });
  for (std::size_t i = 1; i < observations.size(); ++i)
    if (observations[i].dataset_size == observations[i - 1].dataset_size)
      throw InvalidArgument("curve '" + model_id + "': repeated dataset size " +
                            std::to_string(observations[i].dataset_size));
  return {std::move(model_id), std::move(observations)};
}

double penalty(double r, Penalty shape, double huber_delta) {
  if (shape == Penalty::Squared) return r * r;
  const double a = std::abs(r);
  return a <= huber_delta ? r * r : 2.0 * huber_delta * a - huber_delta * huber_delta;
}

double lse_objective(const RectifiedParams& p, const LossCurve& curve, Penalty shape, double huber_delta) {
  if (curve.observations.empty()) throw InvalidArgument("lse_objective: empty curve");
  double total = 0.0;
  for (const auto& o : curve.observations) {
    const double r = log_predict_rectified(p, static_cast<double>(o.dataset_size)) - std::log(o.test_loss);
    total += penalty(r, shape, huber_delta);
  }
  return total;
}

double transition_point(const RectifiedParams& p) {
  require_positive(p.beta, "transition point: beta");
  const double F = ntk_term(p);
  if (F <= 0.0) return 0.0;
  return std::pow(F, 1.0 / p.beta);
}

Phase classify_phase(const RectifiedParams& p, double D) {
  require_positive(D, "classify_phase: D");
  return D < transition_point(p) ? Phase::PrePower : Phase::Power;
}

const char* to_string(Phase phase) { return phase == Phase::PrePower ? "pre_power" : "power"; }

}  // namespace lens
