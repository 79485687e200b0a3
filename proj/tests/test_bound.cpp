#include "lens/bound.hpp"
#include "lens/network_eval.hpp"
#include "lens/task.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace lens;

namespace {

Dataset make_data(std::size_t n, std::size_t d, std::uint64_t seed, double noise = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Dataset data(n);
  for (auto& s : data) {
    s.x.resize(d);
    for (auto& v : s.x) v = nd(rng);
    s.y = noise * nd(rng);
  }
  return data;
}

NetworkSpec mlp(std::vector<std::size_t> dims, std::uint64_t seed = 1) {
  NetworkSpec s;
  s.architecture = Architecture::MLP;
  s.layer_dims = std::move(dims);
  s.seed = seed;
  return s;
}

/// Perturbs the weights away from the snapshot.
ToyNetwork displaced(ToyNetwork net, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  for (auto& w : net.weights()) w += nd(rng);
  return net;
}

/// Dense forward-mode second derivatives, independent of the tape.
Eigen::MatrixXd jet_hessian(const ToyNetwork& net, const Sample& s, std::size_t layer) {
  const LayerShape& shape = net.layers()[layer];
  const auto k = static_cast<Eigen::Index>(shape.size());
  const auto w = net.weights();
  std::vector<ad::Jet2> params(w.begin(), w.end());
  for (Eigen::Index i = 0; i < k; ++i)
    params[shape.offset + static_cast<std::size_t>(i)] = ad::Jet2::variable(w[shape.offset + i], i, k);
  const ad::Jet2 f = detail::evaluate<ad::Jet2>(net.spec(), net.layers(), std::span<const ad::Jet2>(params), s.x);
  const ad::Jet2 loss = 0.5 * ad::square(f - s.y);
  return loss.constant() ? Eigen::MatrixXd::Zero(k, k) : loss.h;
}

/// Gradient of the mean loss restricted to one layer.
Eigen::VectorXd mean_loss_gradient(const ToyNetwork& net, const Dataset& data, std::size_t layer) {
  const LayerShape& shape = net.layers()[layer];
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(shape.size()));
  for (const auto& s : data) {
    const double r = forward(net, s.x) - s.y;
    g += r * param_gradient(net, s.x).segment(static_cast<Eigen::Index>(shape.offset), g.size());
  }
  return g / static_cast<double>(data.size());
}

}  // namespace

TEST_CASE("layer hessian of a linear model is x x^T") {
  NetworkSpec spec;
  spec.architecture = Architecture::Linear;
  spec.layer_dims = {3, 1};
  const auto net = build_toy_network(spec);
  const Dataset data{{{1.0, -2.0, 0.5}, 0.7}};
  const Eigen::Vector3d x(1.0, -2.0, 0.5);
  const auto h = layer_hessian(net, data, 0);
  CHECK((h.matrix - x * x.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(h.eigenvalues.size() == 3);
  CHECK(h.eigenvalues.maxCoeff() == doctest::Approx(x.squaredNorm()));
}

TEST_CASE("layer hessian matches finite differences and the jet oracle") {
  const Dataset data = make_data(5, 3, 4);
  auto net = build_toy_network(mlp({3, 6, 4, 1}));
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto h = layer_hessian(net, data, l);
    const LayerShape& shape = net.layers()[l];
    const auto k = static_cast<Eigen::Index>(shape.size());
    REQUIRE(h.matrix.rows() == k);
    CHECK((h.matrix - h.matrix.transpose()).cwiseAbs().maxCoeff() <= 1e-8);
    Eigen::MatrixXd fd(k, k);
    const double step = 1e-5;
    for (Eigen::Index j = 0; j < k; ++j) {
      double& w = net.weights()[shape.offset + static_cast<std::size_t>(j)];
      const double w0 = w;
      w = w0 + step;
      const Eigen::VectorXd gp = mean_loss_gradient(net, data, l);
      w = w0 - step;
      const Eigen::VectorXd gm = mean_loss_gradient(net, data, l);
      w = w0;
      fd.col(j) = (gp - gm) / (2 * step);
    }
    CHECK((h.matrix - fd).cwiseAbs().maxCoeff() < 1e-5);

    Eigen::MatrixXd jet = Eigen::MatrixXd::Zero(k, k);
    for (const auto& s : data) jet += jet_hessian(net, s, l);
    jet /= static_cast<double>(data.size());
    CHECK((h.matrix - jet).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("layer hessian on attention and smooth relu nets matches the jet oracle") {
  NetworkSpec att;
  att.architecture = Architecture::ToyAttention;
  att.layer_dims = {3, 4, 6};
  att.seed = 5;
  NetworkSpec sr = mlp({2, 5, 1}, 6);
  sr.activation = Activation::SmoothReLU;
  for (const auto& spec : {att, sr}) {
    const auto net = build_toy_network(spec);
    const Dataset data = make_data(2, net.input_dim(), 8);
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      const auto h = sample_hessian(net, data[1], l);
      CHECK((h.matrix - jet_hessian(net, data[1], l)).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("layer hessian edge cases") {
  // Zero weights in a two-layer tanh net: the output stays 0 along any single
  // layer's direction, so the loss is constant in that layer.
  auto spec = mlp({2, 3, 1});
  std::vector<double> zeros(layer_shapes(spec).back().offset + 3, 0.0);
  const auto zero = ToyNetwork::from_weights(spec, zeros);
  const Dataset data = make_data(3, 2, 9);
  CHECK(layer_hessian(zero, data, 0).matrix.cwiseAbs().maxCoeff() == 0.0);

  auto relu = mlp({2, 3, 1});
  relu.activation = Activation::ReLU;
  CHECK_THROWS_AS(layer_hessian(build_toy_network(relu), data, 0), InvalidArgument);
  CHECK_THROWS_AS(layer_hessian(build_toy_network(mlp({2, 3, 1})), data, 7), InvalidArgument);
  CHECK_THROWS_AS(layer_hessian(build_toy_network(mlp({2, 3, 1})), {}, 0), InvalidArgument);
  CHECK_THROWS_AS(layer_hessian(build_toy_network(mlp({50, 50, 1})), make_data(1, 50, 1), 0), InvalidArgument);
  CHECK_THROWS_AS(LayerHessian::from_matrix(0, Eigen::Matrix2d{{0, 1}, {0, 0}}), NumericalError);
}

TEST_CASE("truncated psd quadratic") {
  const auto h = LayerHessian::from_matrix(0, Eigen::Vector2d(1, -1).asDiagonal().toDenseMatrix());
  CHECK(truncated_psd_quadratic(h, Eigen::Vector2d(1, 1)) == doctest::Approx(1.0));
  CHECK_THROWS_AS(truncated_psd_quadratic(h, Eigen::Vector3d(1, 1, 1)), InvalidArgument);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + trial % 7;
    Eigen::MatrixXd A(k, k);
    for (int i = 0; i < A.size(); ++i) A.data()[i] = nd(rng);
    const Eigen::MatrixXd S = A + A.transpose();
    Eigen::VectorXd v(k);
    for (int i = 0; i < k; ++i) v[i] = nd(rng);
    const auto sym = LayerHessian::from_matrix(0, S);
    const double t = truncated_psd_quadratic(sym, v);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    const Eigen::MatrixXd plus =
        es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
    CHECK(std::abs(t - v.dot(plus * v)) < 1e-10 * std::max(1.0, std::abs(t)));
    CHECK(t >= 0.0);
    CHECK(t >= v.dot(S * v) - 1e-10);

    const Eigen::MatrixXd P = A * A.transpose();
    CHECK(truncated_psd_quadratic(LayerHessian::from_matrix(0, P), v) ==
          doctest::Approx(v.dot(P * v)).epsilon(1e-10));
  }
}

TEST_CASE("hessian term") {
  const Dataset data = make_data(10, 3, 11);
  const auto base = build_toy_network(mlp({3, 5, 1}, 2));
  for (std::size_t l = 0; l < base.layers().size(); ++l) CHECK(hessian_term(base, data, l) == 0.0);

  const auto net = displaced(base, 0.2, 12);
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const Eigen::VectorXd v = net.displacement(l);
    double oracle = 0.0;
    for (const auto& s : data) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jet_hessian(net, s, l));
      const Eigen::VectorXd p = es.eigenvectors().transpose() * v;
      oracle = std::max(oracle, p.dot(es.eigenvalues().cwiseMax(0.0).asDiagonal() * p));
    }
    const double h = hessian_term(net, data, l);
    CHECK(h == doctest::Approx(oracle).epsilon(1e-9));
    CHECK(hessian_term(net, {data[0]}, l) ==
          doctest::Approx(truncated_psd_quadratic(sample_hessian(net, data[0], l), v)));
    CHECK(hessian_term(net, data, l, 2.5) == doctest::Approx(2.5 * h));
  }
  CHECK_THROWS_AS(hessian_term(net, data, 0, 0.5), InvalidArgument);

  // v -> c v scales h by c^2 at fixed Hessian.
  const auto H = sample_hessian(net, data[3], 0);
  const Eigen::VectorXd v = net.displacement(0);
  CHECK(truncated_psd_quadratic(H, 3.0 * v) == doctest::Approx(9.0 * truncated_psd_quadratic(H, v)));
  CHECK(hessian_terms(net, data).size() == net.layers().size());
}

TEST_CASE("kl divergence") {
  const auto base = build_toy_network(mlp({2, 3, 1}));
  CHECK(kl_divergence(base, std::vector<double>{1.0, 1.0}) == 0.0);

  NetworkSpec lin;
  lin.architecture = Architecture::Linear;
  lin.layer_dims = {2, 1};
  auto one = build_toy_network(lin);
  one.weights()[0] += 1.0;
  one.weights()[1] -= 1.0;
  CHECK(kl_divergence(one, std::vector<double>{1.0}) == doctest::Approx(1.0));

  const auto net = displaced(base, 0.3, 4);
  const std::vector<double> sig{0.5, 2.0};
  std::vector<Eigen::MatrixXd> cov;
  for (std::size_t l = 0; l < 2; ++l) {
    const auto k = static_cast<Eigen::Index>(net.layers()[l].size());
    cov.push_back(sig[l] * sig[l] * Eigen::MatrixXd::Identity(k, k));
  }
  const double iso = kl_divergence(net, sig);
  CHECK(iso > 0.0);
  CHECK(std::abs(kl_divergence(net, cov) - iso) < 1e-12 * iso);

  CHECK_THROWS_AS(kl_divergence(net, std::vector<double>{1.0, 0.0}), InvalidArgument);
  cov[0].setZero();
  CHECK_THROWS_AS(kl_divergence(net, cov), InvalidArgument);
}

TEST_CASE("pac bound") {
  const auto r = evaluate_pac_bound(0.5, {0.04}, 100, 1.0, 0.01, 1.0);
  CHECK(r.breakdown.base == doctest::Approx(0.505));
  CHECK(r.breakdown.hessian_term == doctest::Approx(0.0202));
  CHECK(r.breakdown.xi_term == doctest::Approx(std::pow(100.0, -0.75)));
  CHECK(r.bound_value == doctest::Approx(0.5568).epsilon(1e-4));
  CHECK(r.bound_value == doctest::Approx(r.breakdown.base + r.breakdown.hessian_term + r.breakdown.xi_term));

  CHECK(evaluate_pac_bound(0.3, {0, 0, 0}, 50, 2.0, 0.1, 0.0).bound_value == doctest::Approx(1.1 * 0.3));
  CHECK(evaluate_pac_bound(0.5, {0.04}, 10000, 1, 0.01).bound_value <
        evaluate_pac_bound(0.5, {0.04}, 100, 1, 0.01).bound_value);
  CHECK_THROWS_AS(evaluate_pac_bound(0.5, {0.04}, 0, 1, 0.01), InvalidArgument);
  CHECK_THROWS_AS(evaluate_pac_bound(0.5, {-0.04}, 10, 1, 0.01), InvalidArgument);
  CHECK_THROWS_AS(evaluate_pac_bound(0.5, {0.04}, 10, 1, 0.0), InvalidArgument);

  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 500; ++trial) {
    const double L = u(rng), C = u(rng), eps = 0.01 + u(rng), xi = u(rng);
    const std::vector<double> h{u(rng), u(rng), u(rng)};
    const std::uint64_t n = 1 + static_cast<std::uint64_t>(1000 * u(rng));
    const double b = evaluate_pac_bound(L, h, n, C, eps, xi).bound_value;
    const double d = 0.1 + u(rng);
    CHECK(evaluate_pac_bound(L, h, n + 1 + static_cast<std::uint64_t>(100 * u(rng)), C, eps, xi).bound_value <= b);
    CHECK(evaluate_pac_bound(L + d, h, n, C, eps, xi).bound_value >= b);
    CHECK(evaluate_pac_bound(L, h, n, C + d, eps, xi).bound_value >= b);
    CHECK(evaluate_pac_bound(L, h, n, C, eps + d, xi).bound_value >= b);
    CHECK(evaluate_pac_bound(L, h, n, C, eps, xi + d).bound_value >= b);
    auto h2 = h;
    h2[trial % 3] += d;
    CHECK(evaluate_pac_bound(L, h2, n, C, eps, xi).bound_value >= b);
  }
}

TEST_CASE("scaling corollary") {
  ScalingBoundParams p{1.0, 0.75, 0, 0};
  CHECK(scaling_corollary_bound(0.0, p, 16, 0.1, 0.0) == doctest::Approx(0.125));
  const auto d = ScalingBoundParams::derive(1.0, 4, 1.0, 0.5);
  CHECK(d.beta3 == 0.75);
  CHECK(d.C3 == 2.0);
  CHECK_THROWS_AS(scaling_corollary_bound(0.0, p, 0.5, 0.1), InvalidArgument);

  for (double beta3 : {0.2, 0.5, 0.7, 0.74}) {
    for (double C3 : {0.01, 1.0, 10.0}) {
      const ScalingBoundParams q{C3, beta3, 0, 0};
      if (C3 == 1.0) CHECK(C3 * std::pow(1e6, -beta3) > std::pow(1e6, -0.75));
      const auto n0 = corollary_crossover(q, 1.0);
      REQUIRE(n0.has_value());
      if (*n0 > 1e12) continue;
      for (double n = *n0 + 1; n < *n0 + 2000; n += 1)
        CHECK(C3 * std::pow(n, -beta3) > std::pow(n, -0.75));
      for (double n : {*n0 * 10, *n0 * 1e3, *n0 * 1e6}) CHECK(C3 * std::pow(n, -beta3) > std::pow(n, -0.75));
    }
  }
  CHECK_FALSE(corollary_crossover({1.0, 0.9, 0, 0}, 1.0).has_value());
}

TEST_CASE("power decay fit") {
  std::vector<double> ns, vals;
  for (double n : {10.0, 30.0, 100.0, 1000.0}) {
    ns.push_back(n);
    vals.push_back(3.0 * std::pow(n, -0.4));
  }
  const auto f = fit_power_decay(ns, vals);
  CHECK(std::abs(f.C - 3.0) < 1e-6);
  CHECK(std::abs(f.decay - 0.4) < 1e-6);
  CHECK(f.slope == doctest::Approx(-0.4));
  CHECK_THROWS_AS(fit_power_decay({10}, {1}), InvalidArgument);
  CHECK_THROWS_AS(fit_power_decay({10, 10}, {1, 2}), InvalidArgument);

  HessianScalingConfig cfg;
  cfg.sizes = {8};
  CHECK_THROWS_AS(hessian_scaling_fit(cfg), InvalidArgument);
}

TEST_CASE("hessian scaling fit runs on a small regression") {
  HessianScalingConfig cfg;
  cfg.student = mlp({2, 6, 1}, 3);
  cfg.source.teacher = mlp({2, 3, 1}, 40);
  cfg.target.teacher = mlp({2, 3, 1}, 41);
  cfg.source_samples = 16;
  cfg.pretrain_steps = 50;
  cfg.sizes = {2, 4, 8};
  cfg.tolerance = 1e-10;
  const auto r = hessian_scaling_fit(cfg);
  REQUIRE(r.sizes.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.trace_h[i] > 0.0);
    CHECK(r.max_h[i] >= 0.0);
  }
  CHECK(std::isfinite(r.trace_fit.slope));
}

TEST_CASE("gauss-newton trace check") {
  NetworkSpec lin;
  lin.architecture = Architecture::Linear;
  lin.layer_dims = {3, 1};
  const auto lnet = build_toy_network(lin);
  Dataset ldata = make_data(6, 3, 15);
  for (auto& s : ldata) s.y = forward(lnet, s.x);
  const auto lc = gauss_newton_trace_check(lnet, ldata);
  CHECK(lc.gap < 1e-10);
  CHECK(lc.trace_h > 0.0);

  const Dataset data = make_data(4, 2, 16);
  const auto untrained = build_toy_network(mlp({2, 8, 1}, 17));
  CHECK_THROWS_AS(gauss_newton_trace_check(untrained, data), InvalidArgument);
  const auto fitted = fit_to_tolerance(untrained, data, 1e-16, 200);
  REQUIRE(fitted.has_value());
  const auto c = gauss_newton_trace_check(*fitted, data);
  CHECK(c.gap / c.trace_h < 1e-4);
}

TEST_CASE("cauchy-schwarz check") {
  auto c = cauchy_schwarz_check({1, 1});
  CHECK(c.lhs == 2.0);
  CHECK(c.rhs == 2.0);
  CHECK(c.holds);
  c = cauchy_schwarz_check({4, 0});
  CHECK(c.lhs == 2.0);
  CHECK(c.rhs == doctest::Approx(std::sqrt(8.0)));
  CHECK_THROWS_AS(cauchy_schwarz_check({1, -1}), InvalidArgument);

  std::mt19937_64 rng(31);
  std::exponential_distribution<double> ex;
  std::size_t held = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> h(1 + trial % 9);
    for (auto& v : h) v = ex(rng) * (trial % 4 == 0 ? 1e-6 : 1.0);
    held += cauchy_schwarz_check(h).holds;
  }
  CHECK(held == 10000);
}

TEST_CASE("weight distance bound") {
  const auto base = build_toy_network(mlp({3, 4, 1}, 7));
  const Dataset data = make_data(20, 3, 19);
  const auto still = weight_distance_bound_check(base, data);
  CHECK(still.holds);
  for (const auto& l : still.layers) CHECK(l.lhs == 0.0);

  RegressionTask task;
  task.teacher = mlp({3, 2, 1}, 50);
  const Dataset target = generate_samples(task, 20, 1);
  const auto tuned = train_sgd(base, target, 0.05, 200).net;
  const auto chk = weight_distance_bound_check(tuned, target);
  CHECK(chk.holds);
  REQUIRE(chk.layers.size() == 2);
  for (const auto& l : chk.layers) {
    CHECK(l.lhs > 0.0);
    CHECK(l.sigma_sq > 0.0);
    CHECK(l.lhs <= l.bound);
  }

  const auto fresh = ToyNetwork::from_weights(base.spec(), std::vector<double>(base.weights().begin(),
                                                                                base.weights().end()));
  CHECK_THROWS_AS(weight_distance_bound_check(fresh, data), InvalidArgument);

  // All-zero inputs: degenerate branch, bound 0.
  Dataset zeros(3, Sample{{0, 0, 0}, 0.0});
  const auto z = weight_distance_bound_check(base, zeros);
  CHECK(z.layers[0].bound == 0.0);
  CHECK(z.holds);
}
