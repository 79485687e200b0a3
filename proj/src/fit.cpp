#include "lens/fit.hpp"

#include "lens/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace lens {

namespace {

double softplus(double e) { return e > 30.0 ? e : std::log1p(std::exp(e)); }
double inverse_softplus(double E) { return E > 30.0 ? E : std::log(std::expm1(E)); }
double sigmoid(double e) { return 1.0 / (1.0 + std::exp(-e)); }

/// Coordinates: [log B, e (E = softplus e), log beta, (log F0)] and, for the
/// joint phase, a trailing u with t = expm1(|u|).
class CurveModel {
 public:
  CurveModel(const LossCurve& curve, const FitConfig& cfg) : cfg_(cfg) {
    for (const auto& o : curve.observations) {
      log_d_.push_back(std::log(static_cast<double>(o.dataset_size)));
      log_l_.push_back(std::log(o.test_loss));
    }
    if (cfg.offset == OffsetModel::Kernel) {
      if (!cfg.kernel || !cfg.kernel->kernel) throw InvalidArgument("fit: kernel offset requested without a kernel");
      const KernelMatrix& k = *cfg.kernel->kernel;
      if (cfg.kernel->residual.size() != k.dim()) throw InvalidArgument("fit: kernel/residual dimension mismatch");
      const Eigen::VectorXd proj = k.eigenvectors().transpose() * cfg.kernel->residual;
      for (Eigen::Index i = 0; i < proj.size(); ++i) {
        weights_.push_back(proj[i] * proj[i]);
        rates_.push_back(2.0 * cfg.kernel->eta * k.eigenvalues()[i]);
      }
    }
    fit_f0_ = cfg.offset == OffsetModel::Surrogate && !cfg.fixed_f0;
    t_active_ = cfg.offset == OffsetModel::Kernel || cfg.surrogate_kappa > 0.0;
  }

  std::size_t n_points() const { return log_d_.size(); }
  Eigen::Index inner_dim() const { return fit_f0_ ? 4 : 3; }
  Eigen::Index full_dim() const { return inner_dim() + (t_active_ ? 1 : 0); }
  bool t_active() const { return t_active_; }
  bool fit_f0() const { return fit_f0_; }
  const std::vector<double>& log_d() const { return log_d_; }
  const std::vector<double>& log_l() const { return log_l_; }

  static double t_of(double u) { return std::expm1(std::abs(u)); }
  static double u_of(double t) { return std::log1p(t); }

  /// F and dF/d(log F0).
  double offset(const Eigen::VectorXd& x, double t, double* d_log_f0) const {
    if (cfg_.offset == OffsetModel::Kernel) {
      double F = 0.0;
      for (std::size_t k = 0; k < weights_.size(); ++k) F += weights_[k] * std::exp(-rates_[k] * t);
      if (d_log_f0) *d_log_f0 = 0.0;
      return F;
    }
    const double f0 = fit_f0_ ? std::exp(x[3]) : *cfg_.fixed_f0;
    const double F = cfg_.surrogate_kappa > 0.0 ? f0 * std::exp(-cfg_.surrogate_kappa * t) : f0;
    if (d_log_f0) *d_log_f0 = fit_f0_ ? F : 0.0;
    return F;
  }

  /// Log-residuals at inner coordinates x and time t; analytic Jacobian over x.
  bool residuals(const Eigen::VectorXd& x, double t, Eigen::VectorXd& r, Eigen::MatrixXd* J) const {
    const double log_b = x[0], e = x[1], beta = std::exp(x[2]);
    if (!std::isfinite(log_b) || !std::isfinite(e) || !std::isfinite(beta)) return false;
    if (beta > 50.0 || beta < 1e-8 || std::abs(log_b) > 700.0) return false;
    double dF = 0.0;
    const double F = offset(x, t, &dF);
    const double E = softplus(e);
    const double log_e = E > 0.0 ? std::log(E) : -std::numeric_limits<double>::infinity();
    const double dlog_e = E > 0.0 ? sigmoid(e) / E : 0.0;
    const auto n = static_cast<Eigen::Index>(log_d_.size());
    r.resize(n);
    if (J) J->resize(n, inner_dim());
    for (Eigen::Index i = 0; i < n; ++i) {
      const double log_pow = beta * log_d_[static_cast<std::size_t>(i)];
      const double log_denom = F > 0.0 ? log_sum_exp(std::log(F), log_pow) : log_pow;
      const double a = log_b - log_denom;
      const double pred = log_sum_exp(a, log_e);
      r[i] = pred - log_l_[static_cast<std::size_t>(i)];
      if (J) {
        const double w = std::exp(a - pred);            // share of the B-term in L
        const double pow_share = std::exp(log_pow - log_denom);  // D^beta / (F + D^beta)
        (*J)(i, 0) = w;
        (*J)(i, 1) = (1.0 - w) * dlog_e;
        (*J)(i, 2) = -w * pow_share * log_pow;
        if (fit_f0_) (*J)(i, 3) = -w * (F > 0.0 ? dF / std::exp(log_denom) : 0.0);
      }
    }
    return r.allFinite();
  }

  bool full_residuals(const Eigen::VectorXd& z, Eigen::VectorXd& r, Eigen::MatrixXd* J) const {
    const Eigen::Index m = inner_dim();
    const Eigen::VectorXd x = z.head(m);
    const double t = t_active_ ? t_of(z[m]) : 0.0;
    if (!std::isfinite(t)) return false;
    if (!J) return residuals(x, t, r, nullptr);
    Eigen::MatrixXd Jx;
    if (!residuals(x, t, r, &Jx)) return false;
    J->resize(r.size(), full_dim());
    J->leftCols(m) = Jx;
    if (t_active_) {
      const double h = 1e-6 * std::max(1.0, std::abs(z[m]));
      Eigen::VectorXd rp, rm;
      if (!residuals(x, t_of(z[m] + h), rp, nullptr) || !residuals(x, t_of(z[m] - h), rm, nullptr)) return false;
      J->col(m) = (rp - rm) / (2.0 * h);
    }
    return true;
  }

  double objective(const Eigen::VectorXd& z) const {
    Eigen::VectorXd r;
    if (!full_residuals(z, r, nullptr)) return std::numeric_limits<double>::infinity();
    double total = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) total += penalty(r[i], cfg_.penalty, cfg_.huber_delta);
    return total;
  }

  RectifiedParams to_params(const Eigen::VectorXd& z) const {
    RectifiedParams p;
    p.B = std::exp(z[0]);
    p.E = softplus(z[1]);
    p.beta = std::exp(z[2]);
    p.t = t_active_ ? t_of(z[inner_dim()]) : 0.0;
    if (cfg_.offset == OffsetModel::Kernel) {
      p.f_mode = *cfg_.kernel;
    } else {
      p.f_mode = SurrogateF{fit_f0_ ? std::exp(z[3]) : *cfg_.fixed_f0, cfg_.surrogate_kappa};
    }
    return p;
  }

 private:
  const FitConfig& cfg_;
  std::vector<double> log_d_, log_l_;
  std::vector<double> weights_, rates_;
  bool fit_f0_ = true;
  bool t_active_ = false;
};

struct Candidate {
  Eigen::VectorXd z;
  double cost;
};

/// Phase-1 starting points for a fixed t.
std::vector<Eigen::VectorXd> inner_starts(const CurveModel& m, double t) {
  const auto& log_d = m.log_d();
  const auto& log_l = m.log_l();
  const double min_l = std::exp(*std::min_element(log_l.begin(), log_l.end()));
  const double e0 = 0.5 * min_l;
  std::vector<Eigen::VectorXd> out;
  for (double beta0 : {0.2, 0.5, 1.0}) {
    std::vector<double> f0s;
    if (m.fit_f0()) {
      const double mid = 0.5 * (log_d.front() + log_d.back());
      for (double ld : {log_d.front(), mid, log_d.back()}) f0s.push_back(std::exp(beta0 * ld));
      f0s.push_back(1e-3);
    } else {
      f0s.push_back(std::numeric_limits<double>::quiet_NaN());
    }
    for (double f0 : f0s) {
      Eigen::VectorXd x(m.inner_dim());
      x[1] = inverse_softplus(e0);
      x[2] = std::log(beta0);
      if (m.fit_f0()) x[3] = std::log(f0);
      x[0] = 0.0;
      const double F = m.offset(x, t, nullptr);
      std::vector<double> b_est;
      for (std::size_t i = 0; i < log_d.size(); ++i) {
        const double excess = std::exp(log_l[i]) - e0;
        if (excess > 0.0) b_est.push_back(excess * (F + std::exp(beta0 * log_d[i])));
      }
      double b0 = 1.0;
      if (!b_est.empty()) {
        std::nth_element(b_est.begin(), b_est.begin() + static_cast<long>(b_est.size() / 2), b_est.end());
        b0 = b_est[b_est.size() / 2];
      }
      x[0] = std::log(std::max(b0, 1e-12));
      out.push_back(std::move(x));
    }
  }
  return out;
}

bool is_flat(const LossCurve& curve) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& o : curve.observations) {
    lo = std::min(lo, o.test_loss);
    hi = std::max(hi, o.test_loss);
  }
  return hi - lo <= 1e-12 * hi;
}

}  // namespace

std::vector<double> t_grid(const FitConfig& cfg) {
  if (cfg.t_grid_points == 0) return {};
  if (!(cfg.t_grid_min > 0.0) || !(cfg.t_grid_max >= cfg.t_grid_min))
    throw InvalidArgument("fit: t grid bounds must satisfy 0 < min <= max");
  std::vector<double> grid(cfg.t_grid_points);
  const double lo = std::log(cfg.t_grid_min), hi = std::log(cfg.t_grid_max);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double f = grid.size() == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(grid.size() - 1);
    grid[i] = std::exp(lo + f * (hi - lo));
  }
  return grid;
}

std::size_t free_parameter_count(const FitConfig& cfg) {
  std::size_t n = 3;  // B, E, beta
  if (cfg.offset == OffsetModel::Surrogate && !cfg.fixed_f0) ++n;
  if (cfg.offset == OffsetModel::Kernel || cfg.surrogate_kappa > 0.0) ++n;
  return n;
}

FitResult fit_two_phase(const LossCurve& curve, const FitConfig& cfg) {
  const std::size_t needed = std::max<std::size_t>(4, free_parameter_count(cfg));
  if (curve.observations.size() < needed)
    throw InvalidArgument("fit: insufficient points (" + std::to_string(curve.observations.size()) + " < " +
                          std::to_string(needed) + ")");
  if (cfg.offset == OffsetModel::Surrogate && cfg.fixed_f0 && !(*cfg.fixed_f0 >= 0.0))
    throw InvalidArgument("fit: fixed F0 must be nonnegative");

  const CurveModel model(curve, cfg);
  FitResult result;

  if (is_flat(curve)) {
    double mean = 0.0;
    for (const auto& o : curve.observations) mean += o.test_loss;
    mean /= static_cast<double>(curve.observations.size());
    RectifiedParams p;
    p.B = 1e-12;
    p.E = mean;
    p.beta = 1.0;
    p.t = 0.0;
    if (cfg.offset == OffsetModel::Kernel) p.f_mode = *cfg.kernel;
    else p.f_mode = SurrogateF{cfg.fixed_f0.value_or(0.0), cfg.surrogate_kappa};
    result.params = p;
    result.objective_value = lse_objective(p, curve, cfg.penalty, cfg.huber_delta);
    result.residual_std = std::sqrt(result.objective_value / static_cast<double>(curve.observations.size()));
    result.degenerate = true;
    result.converged = true;
    return result;
  }

  // Phase 1: t held fixed.
  std::vector<double> ts;
  if (model.t_active()) {
    ts.push_back(0.0);
    for (double t : t_grid(cfg)) ts.push_back(t);
  } else {
    ts.push_back(0.0);
  }
  optim::LmOptions lm_opts;
  lm_opts.max_iterations = 100;
  std::vector<Candidate> phase1;
  for (double t : ts) {
    const optim::ResidualFn fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
      return model.residuals(x, t, r, J);
    };
    Candidate best{Eigen::VectorXd(), std::numeric_limits<double>::infinity()};
    for (const auto& x0 : inner_starts(model, t)) {
      const auto fit = optim::levenberg_marquardt(fn, x0, lm_opts);
      if (fit.cost < best.cost) best = {fit.x, fit.cost};
    }
    if (!std::isfinite(best.cost)) continue;
    Eigen::VectorXd z(model.full_dim());
    z.head(model.inner_dim()) = best.z;
    if (model.t_active()) z[model.inner_dim()] = CurveModel::u_of(t);
    phase1.push_back({std::move(z), best.cost});
  }
  if (phase1.empty()) throw NumericalError("fit: no finite starting point for curve '" + curve.model_id + "'");
  std::sort(phase1.begin(), phase1.end(), [](const auto& a, const auto& b) { return a.cost < b.cost; });

  // Phase 2: joint simplex from the best phase-1 points, then perturbations.
  const std::size_t restarts = std::max<std::size_t>(1, cfg.restarts);
  std::vector<Eigen::VectorXd> starts;
  for (std::size_t i = 0; i < phase1.size() && starts.size() < std::min<std::size_t>(restarts, 4); ++i)
    starts.push_back(phase1[i].z);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> jitter(0.0, 0.5);
  while (starts.size() < restarts) {
    Eigen::VectorXd z = phase1.front().z;
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] += jitter(rng);
    starts.push_back(std::move(z));
  }

  const auto objective = [&](const Eigen::VectorXd& z) { return model.objective(z); };
  optim::NelderMeadOptions nm_opts;
  nm_opts.max_evaluations = cfg.max_evaluations;
  const Eigen::VectorXd step = Eigen::VectorXd::Constant(model.full_dim(), 0.1);
  optim::NelderMeadResult best;
  best.value = std::numeric_limits<double>::infinity();
  for (const auto& z0 : starts) {
    auto nm = optim::nelder_mead(objective, z0, step, nm_opts);
    ++result.n_restarts_used;
    if (nm.value < best.value) best = std::move(nm);
  }
  Eigen::VectorXd z = best.x;
  double value = best.value;
  bool converged = best.converged;

  if (cfg.penalty == Penalty::Squared) {
    const optim::ResidualFn fn = [&](const Eigen::VectorXd& zz, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
      return model.full_residuals(zz, r, J);
    };
    const auto polish = optim::levenberg_marquardt(fn, z, lm_opts);
    if (polish.cost <= value) {
      z = polish.x;
      value = polish.cost;
      converged = converged || polish.converged;
    }
  }

  result.params = model.to_params(z);
  result.objective_value = value;
  Eigen::VectorXd r;
  model.full_residuals(z, r, nullptr);
  result.residual_std = std::sqrt(r.squaredNorm() / static_cast<double>(r.size()));
  result.converged = converged;
  return result;
}

}  // namespace lens
