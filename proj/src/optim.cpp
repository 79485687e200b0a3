#include "lens/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace lens::optim {

bool numeric_jacobian(const ResidualFn& fn, const Eigen::VectorXd& x, Eigen::MatrixXd& J, double rel_step) {
  Eigen::VectorXd rp, rm;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = rel_step * std::max(1.0, std::abs(x[j]));
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    if (!fn(xp, rp, nullptr) || !fn(xm, rm, nullptr)) return false;
    if (j == 0) J.resize(rp.size(), x.size());
    J.col(j) = (rp - rm) / (2.0 * h);
  }
  return true;
}

LmResult levenberg_marquardt(const ResidualFn& fn, Eigen::VectorXd x, const LmOptions& opts) {
  LmResult out;
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  if (!fn(x, r, &J) || !r.allFinite()) {
    out.x = std::move(x);
    out.cost = std::numeric_limits<double>::infinity();
    return out;
  }
  double cost = r.squaredNorm();
  double lambda = opts.initial_damping;
  Eigen::VectorXd r_trial;
  Eigen::MatrixXd J_trial;
  std::size_t it = 0;
  bool done = false;
  for (; it < opts.max_iterations && !done; ++it) {
    const Eigen::VectorXd g = J.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() < opts.gradient_tol) {
      out.converged = true;
      break;
    }
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd A = JtJ;
      for (Eigen::Index i = 0; i < A.rows(); ++i) A(i, i) += lambda * std::max(JtJ(i, i), 1e-12);
      const Eigen::VectorXd dx = A.ldlt().solve(-g);
      if (!dx.allFinite()) {
        lambda *= 10.0;
        if (lambda > 1e16) break;
        continue;
      }
      const Eigen::VectorXd xt = x + dx;
      if (fn(xt, r_trial, &J_trial) && r_trial.allFinite()) {
        const double c = r_trial.squaredNorm();
        if (c <= cost) {
          const bool tiny_step = dx.norm() <= opts.step_tol * (x.norm() + opts.step_tol);
          const bool tiny_gain = cost - c <= 1e-15 * cost;
          x = xt;
          r.swap(r_trial);
          J.swap(J_trial);
          cost = c;
          lambda = std::max(lambda / 3.0, 1e-12);
          accepted = true;
          if (tiny_step || (tiny_gain && cost < 1e-28)) out.converged = done = true;
          break;
        }
      }
      lambda *= 4.0;
      if (lambda > 1e16) break;
    }
    if (!accepted) {
      // No descent direction left at machine precision.
      out.converged = true;
      break;
    }
  }
  out.x = std::move(x);
  out.cost = cost;
  out.iterations = it;
  return out;
}

NelderMeadResult nelder_mead(const ObjectiveFn& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& step,
                             const NelderMeadOptions& opts) {
  const Eigen::Index n = x0.size();
  auto eval = [&](const Eigen::VectorXd& x) {
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> vals(static_cast<std::size_t>(n + 1));
  for (Eigen::Index i = 0; i < n; ++i) pts[static_cast<std::size_t>(i + 1)][i] += step[i];
  NelderMeadResult out;
  for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = eval(pts[i]);
  out.evaluations = pts.size();

  std::vector<std::size_t> order(pts.size());
  while (out.evaluations < opts.max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];

    double spread = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      spread = std::max(spread, (pts[i] - pts[best]).lpNorm<Eigen::Infinity>());
    if (std::abs(vals[worst] - vals[best]) <= opts.f_tol * (std::abs(vals[best]) + 1e-300) + 1e-300 &&
        spread <= opts.x_tol) {
      out.converged = true;
      break;
    }
    if (spread <= 1e-3 * opts.x_tol) {  // collapsed simplex
      out.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
    const double fr = eval(xr);
    ++out.evaluations;
    if (fr < vals[best]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = eval(xe);
      ++out.evaluations;
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    const Eigen::VectorXd xc =
        outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid)) : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = eval(xc);
    ++out.evaluations;
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i == best) continue;
      pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
      vals[i] = eval(pts[i]);
      ++out.evaluations;
    }
  }
  const auto it = std::min_element(vals.begin(), vals.end());
  out.x = pts[static_cast<std::size_t>(it - vals.begin())];
  out.value = *it;
  return out;
}

}  // namespace lens::optim
