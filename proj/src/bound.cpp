#include "lens/bound.hpp"

#include "lens/error.hpp"
#include "lens/network_eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace lens {

namespace {

void require_smooth(const ToyNetwork& net, std::size_t layer) {
  if (net.spec().activation == Activation::ReLU)
    throw InvalidArgument("hessian: plain ReLU is not twice differentiable; use smooth_relu or tanh");
  if (layer >= net.layers().size()) throw InvalidArgument("hessian: layer index out of range");
  if (net.layers()[layer].size() > kMaxHessianLayerParams)
    throw InvalidArgument("hessian: layer " + std::to_string(layer) + " has " +
                          std::to_string(net.layers()[layer].size()) + " parameters (limit " +
                          std::to_string(kMaxHessianLayerParams) + ")");
}

}  // namespace

LayerHessian LayerHessian::from_matrix(std::size_t layer_index, const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw InvalidArgument("hessian: matrix is not square");
  if (m.size() > 0 && (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8)
    throw NumericalError("hessian: matrix is not symmetric");
  LayerHessian h;
  h.layer_index = layer_index;
  h.matrix = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h.matrix);
  if (es.info() != Eigen::Success) throw NumericalError("hessian: eigendecomposition failed");
  h.eigenvalues = es.eigenvalues();
  h.eigenvectors = es.eigenvectors();
  return h;
}

LayerHessian sample_hessian(const ToyNetwork& net, const Sample& sample, std::size_t layer) {
  require_smooth(net, layer);
  return LayerHessian::from_matrix(layer, detail::sample_layer_hessian(net, sample, layer));
}

LayerHessian layer_hessian(const ToyNetwork& net, const Dataset& data, std::size_t layer) {
  require_smooth(net, layer);
  if (data.empty()) throw InvalidArgument("hessian: empty dataset");
  const auto k = static_cast<Eigen::Index>(net.layers()[layer].size());
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, k);
  for (const auto& s : data) sum += detail::sample_layer_hessian(net, s, layer);
  return LayerHessian::from_matrix(layer, sum / static_cast<double>(data.size()));
}

double truncated_psd_quadratic(const LayerHessian& h, const Eigen::VectorXd& v) {
  if (v.size() != h.eigenvalues.size()) throw InvalidArgument("truncated quadratic: dimension mismatch");
  const Eigen::VectorXd proj = h.eigenvectors.transpose() * v;
  double total = 0.0;
  for (Eigen::Index i = 0; i < proj.size(); ++i) total += std::max(h.eigenvalues[i], 0.0) * proj[i] * proj[i];
  return total;
}

double hessian_term(const ToyNetwork& net, const Dataset& data, std::size_t layer, double slack) {
  if (!(slack >= 1.0)) throw InvalidArgument("hessian term: slack must be >= 1");
  if (data.empty()) throw InvalidArgument("hessian term: empty dataset");
  require_smooth(net, layer);
  const Eigen::VectorXd v = net.displacement(layer);
  if (v.squaredNorm() == 0.0) return 0.0;
  double best = 0.0;
  for (const auto& s : data) best = std::max(best, truncated_psd_quadratic(sample_hessian(net, s, layer), v));
  return slack * best;
}

std::vector<double> hessian_terms(const ToyNetwork& net, const Dataset& data, double slack) {
  std::vector<double> out;
  for (std::size_t l = 0; l < net.layers().size(); ++l) out.push_back(hessian_term(net, data, l, slack));
  return out;
}

double kl_divergence(const ToyNetwork& net, const std::vector<double>& sigmas) {
  if (sigmas.size() != net.layers().size()) throw InvalidArgument("kl: one sigma per layer required");
  double total = 0.0;
  for (std::size_t l = 0; l < sigmas.size(); ++l) {
    if (!(sigmas[l] > 0.0)) throw InvalidArgument("kl: sigma must be positive");
    total += net.displacement(l).squaredNorm() / (2.0 * sigmas[l] * sigmas[l]);
  }
  return total;
}

double kl_divergence(const ToyNetwork& net, const std::vector<Eigen::MatrixXd>& covariances) {
  if (covariances.size() != net.layers().size()) throw InvalidArgument("kl: one covariance per layer required");
  double total = 0.0;
  for (std::size_t l = 0; l < covariances.size(); ++l) {
    const Eigen::VectorXd v = net.displacement(l);
    const auto& S = covariances[l];
    if (S.rows() != v.size() || S.cols() != v.size()) throw InvalidArgument("kl: covariance dimension mismatch");
    const Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) throw InvalidArgument("kl: covariance is not positive definite");
    total += 0.5 * v.dot(llt.solve(v));
  }
  return total;
}

// ---------------------------------------------------------------------------

BoundReport evaluate_pac_bound(double empirical_loss, const std::vector<double>& h, std::uint64_t n, double C,
                               double epsilon, double xi_constant) {
  if (n == 0) throw InvalidArgument("bound: n must be at least 1");
  if (!(epsilon > 0.0)) throw InvalidArgument("bound: epsilon must be positive");
  if (!(empirical_loss >= 0.0) || !(C >= 0.0) || !(xi_constant >= 0.0))
    throw InvalidArgument("bound: loss, C and xi constant must be nonnegative");
  double sum_sqrt = 0.0;
  for (double v : h) {
    if (!(v >= 0.0)) throw InvalidArgument("bound: h entries must be nonnegative");
    sum_sqrt += std::sqrt(v);
  }
  const auto nd = static_cast<double>(n);
  BoundReport r;
  r.empirical_loss = empirical_loss;
  r.h = h;
  r.n = n;
  r.C = C;
  r.epsilon = epsilon;
  r.xi_constant = xi_constant;
  r.breakdown.base = (1.0 + epsilon) * empirical_loss;
  r.breakdown.hessian_term = (1.0 + epsilon) * std::sqrt(C) * sum_sqrt / std::sqrt(nd);
  r.breakdown.xi_term = xi_constant * std::pow(nd, -0.75);
  r.bound_value = r.breakdown.base + r.breakdown.hessian_term + r.breakdown.xi_term;
  return r;
}

ScalingBoundParams ScalingBoundParams::derive(double C, std::size_t layers, double C2, double beta2) {
  if (!(C >= 0.0) || !(C2 >= 0.0) || layers == 0) throw InvalidArgument("corollary: invalid constants");
  ScalingBoundParams p;
  p.C2 = C2;
  p.beta2 = beta2;
  p.beta3 = (beta2 + 1.0) / 2.0;
  p.C3 = std::sqrt(C * static_cast<double>(layers) * C2);
  return p;
}

double scaling_corollary_bound(double empirical_loss, const ScalingBoundParams& p, double n, double epsilon,
                               double xi_constant) {
  if (!(n >= 1.0)) throw InvalidArgument("corollary: n must be at least 1");
  return (1.0 + epsilon) * empirical_loss + p.C3 * std::pow(n, -p.beta3) + xi_constant * std::pow(n, -0.75);
}

std::optional<double> corollary_crossover(const ScalingBoundParams& p, double xi_constant) {
  if (!(p.C3 > 0.0)) return std::nullopt;
  if (xi_constant <= 0.0) return 1.0;
  if (p.beta3 >= 0.75) {
    if (p.beta3 == 0.75 && p.C3 > xi_constant) return 1.0;
    return std::nullopt;
  }
  // n^{3/4 - beta3} > xi / C3.
  const double root = std::pow(xi_constant / p.C3, 1.0 / (0.75 - p.beta3));
  double n0 = std::max(1.0, std::ceil(root));
  for (int i = 0; i < 1000; ++i) {
    const double next = std::max(n0 + 1.0, n0 * (1.0 + 1e-15));
    if (p.C3 * std::pow(next, -p.beta3) > xi_constant * std::pow(next, -0.75)) break;
    n0 = next;
  }
  if (!std::isfinite(n0)) return std::nullopt;
  return n0;
}

// ---------------------------------------------------------------------------

PowerFit fit_power_decay(const std::vector<double>& ns, const std::vector<double>& values) {
  if (ns.size() != values.size()) throw InvalidArgument("power fit: length mismatch");
  if (ns.size() < 2) throw InvalidArgument("power fit: need at least 2 sizes");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (!(ns[i] > 0.0) || !(values[i] > 0.0)) throw InvalidArgument("power fit: sizes and values must be positive");
    mx += std::log(ns[i]);
    my += std::log(values[i]);
  }
  const auto n = static_cast<double>(ns.size());
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const double dx = std::log(ns[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(values[i]) - my);
  }
  if (!(sxx > 0.0)) throw InvalidArgument("power fit: sizes must not all be equal");
  PowerFit f;
  f.slope = sxy / sxx;
  f.decay = -f.slope;
  f.C = std::exp(my - f.slope * mx);
  return f;
}

double hessian_trace(const ToyNetwork& net, const Dataset& data) {
  double total = 0.0;
  for (std::size_t l = 0; l < net.layers().size(); ++l) total += layer_hessian(net, data, l).matrix.trace();
  return total;
}

HessianScalingResult hessian_scaling_fit(const HessianScalingConfig& cfg) {
  if (cfg.sizes.size() < 2) throw InvalidArgument("hessian scaling: need at least 2 sizes");
  const ToyNetwork base = pretrain(cfg.student, cfg.source, cfg.source_samples, cfg.pretrain_lr, cfg.pretrain_steps);
  const std::size_t largest = *std::max_element(cfg.sizes.begin(), cfg.sizes.end());
  const Dataset pool = generate_samples(cfg.target, largest, cfg.seed);
  HessianScalingResult out;
  for (std::size_t n : cfg.sizes) {
    if (n == 0) throw InvalidArgument("hessian scaling: sizes must be positive");
    const Dataset data(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
    const auto tuned = fit_to_tolerance(base, data, cfg.tolerance, cfg.max_iters);
    if (!tuned)
      throw NumericalError("hessian scaling: training did not reach tolerance at n = " + std::to_string(n));
    const auto h = hessian_terms(*tuned, data);
    out.sizes.push_back(n);
    out.max_h.push_back(*std::max_element(h.begin(), h.end()));
    out.trace_h.push_back(hessian_trace(*tuned, data));
  }
  const std::vector<double> ns(out.sizes.begin(), out.sizes.end());
  out.h_fit = fit_power_decay(ns, out.max_h);
  out.trace_fit = fit_power_decay(ns, out.trace_h);
  return out;
}

GaussNewtonCheck gauss_newton_trace_check(const ToyNetwork& net, const Dataset& data, double tolerance) {
  if (data.empty()) throw InvalidArgument("gauss-newton check: empty dataset");
  const double mse = mean_squared_error(net, data);
  if (!(mse <= tolerance))
    throw InvalidArgument("gauss-newton check: network does not fit the data (mse " + std::to_string(mse) +
                          " above " + std::to_string(tolerance) + ")");
  GaussNewtonCheck c;
  c.trace_h = hessian_trace(net, data);
  for (const auto& s : data) c.gn_trace += param_gradient(net, s.x).squaredNorm();
  c.gn_trace /= static_cast<double>(data.size());
  c.gap = std::abs(c.trace_h - c.gn_trace);
  return c;
}

CauchySchwarzCheck cauchy_schwarz_check(const std::vector<double>& h) {
  CauchySchwarzCheck c;
  double sum = 0.0;
  for (double v : h) {
    if (!(v >= 0.0)) throw InvalidArgument("cauchy-schwarz: entries must be nonnegative");
    c.lhs += std::sqrt(v);
    sum += v;
  }
  c.rhs = std::sqrt(static_cast<double>(h.size()) * sum);
  c.holds = c.lhs <= c.rhs + 1e-12;
  return c;
}

WeightDistanceCheck weight_distance_bound_check(const ToyNetwork& net, const Dataset& data) {
  if (!net.has_pretrained()) throw InvalidArgument("weight distance: network has no pretrained snapshot");
  const auto inputs = data.empty() ? std::vector<Eigen::MatrixXd>(net.layers().size()) : layer_inputs(net, data);
  WeightDistanceCheck out;
  out.holds = true;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const LayerShape& shape = net.layers()[l];
    const Eigen::VectorXd d = net.displacement(l);
    const Eigen::MatrixXd dW =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            d.data(), static_cast<Eigen::Index>(shape.rows), static_cast<Eigen::Index>(shape.cols));
    WeightDistanceLayer w;
    w.lhs = d.squaredNorm();
    const Eigen::MatrixXd& X = inputs[l];
    const bool empty = X.rows() == 0 || X.cwiseAbs().maxCoeff() == 0.0;
    if (empty) {
      // No input reaches the layer: its weights cannot have moved.
      w.bound = 0.0;
    } else {
      const Eigen::MatrixXd out_pert = X * dW.transpose();
      w.sigma_sq = out_pert.rowwise().squaredNorm().maxCoeff();
      const Eigen::MatrixXd M = X.transpose() * X / static_cast<double>(X.rows());
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
      w.min_input_energy = std::max(es.eigenvalues()[0], 0.0);
      const double k = static_cast<double>(std::min(shape.rows, shape.cols));
      w.bound = w.min_input_energy > 1e-12 * M.trace() ? k * w.sigma_sq / w.min_input_energy
                                                       : std::numeric_limits<double>::infinity();
    }
    w.holds = w.lhs <= w.bound * (1.0 + 1e-12) + 1e-300;
    out.holds = out.holds && w.holds;
    out.layers.push_back(w);
  }
  return out;
}

}  // namespace lens
