#include "lens/fit.hpp"
#include "lens/scaling_law.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>

using namespace lens;

namespace {

RectifiedParams surrogate(double B, double E, double beta, double f0, double kappa = 0.0, double t = 0.0) {
  RectifiedParams p;
  p.B = B;
  p.E = E;
  p.beta = beta;
  p.t = t;
  p.f_mode = SurrogateF{f0, kappa};
  return p;
}

LossCurve curve_from(const RectifiedParams& p, int lo_exp, int hi_exp, double noise = 0.0, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, noise);
  std::vector<LossObservation> obs;
  for (int k = lo_exp; k <= hi_exp; ++k) {
    const double D = std::ldexp(1.0, k);
    const double l = predict_rectified(p, D) * (noise > 0.0 ? std::exp(nd(rng)) : 1.0);
    obs.push_back({static_cast<std::uint64_t>(D), l, std::nullopt});
  }
  return make_curve("m", std::move(obs));
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

// Local slope d log L / d log D by central difference.
double log_slope(const RectifiedParams& p, double D) {
  const double h = 1e-4;
  return (std::log(predict_rectified(p, D * std::exp(h))) - std::log(predict_rectified(p, D * std::exp(-h)))) /
         (2.0 * h);
}

}  // namespace

TEST_CASE("power and fixed-model laws") {
  CHECK(predict_power_law({1, 1, 1, 1, 1}, 2, 2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(predict_power_law({0, 1, 1, 1, 0.5}, 3, 100) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(predict_power_law({2, 1, 1.5, 0.5, 1}, 4, 1e15) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(predict_power_law({}, 0, 1), InvalidArgument);
  CHECK_THROWS_AS(predict_power_law({}, 1, -1), InvalidArgument);

  CHECK(predict_fixed_law({1, 0, 1, 1}, 10) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(predict_fixed_law({1, 1, 2, 1}, 1) == doctest::Approx(4.0).epsilon(1e-15));
  for (double D : {1.0, 10.0, 1e6}) CHECK(predict_fixed_law({0, 0.3, 2, 0.7}, D) == doctest::Approx(0.09));
  double prev = predict_fixed_law({2, 0.1, 1.3, 0.4}, 1);
  for (double D = 2; D < 1e7; D *= 3) {
    const double cur = predict_fixed_law({2, 0.1, 1.3, 0.4}, D);
    CHECK(cur <= prev);
    prev = cur;
  }
  CHECK_THROWS_AS(predict_fixed_law({}, 0), InvalidArgument);
}

TEST_CASE("rectified law predictions") {
  CHECK(predict_rectified(surrogate(1, 0.1, 0.5, 0), 100) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(predict_rectified(surrogate(1, 0.1, 0.5, 1e300), 100) == doctest::Approx(0.1).epsilon(1e-15));

  RectifiedParams k;
  k.B = 1;
  k.E = 0;
  k.beta = 1;
  k.t = 1;
  auto kernel = std::make_shared<const KernelMatrix>(KernelMatrix::from_entries(Eigen::MatrixXd::Identity(2, 2)));
  k.f_mode = KernelF{kernel, Eigen::Vector2d(2.0, 0.0), 1.0};
  CHECK(predict_rectified(k, 1) == doctest::Approx(1.0 / (4.0 * std::exp(-2.0) + 1.0)).epsilon(1e-14));

  CHECK_THROWS_AS(predict_rectified(surrogate(1, 0.1, 0.5, 0), 0), InvalidArgument);
  CHECK_THROWS_AS(predict_rectified(surrogate(-1, 0.1, 0.5, 0), 10), InvalidArgument);
  CHECK_THROWS_AS(predict_rectified(surrogate(1, -0.1, 0.5, 0), 10), InvalidArgument);
  CHECK_THROWS_AS(predict_rectified(surrogate(1, 0.1, 0, 0), 10), InvalidArgument);
  CHECK_THROWS_AS(predict_rectified(surrogate(1, 0.1, 0.5, -1), 10), InvalidArgument);
}

TEST_CASE("rectified law shape properties") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = surrogate(std::exp(4 * u(rng) - 2), u(rng), 0.1 + u(rng), std::exp(8 * u(rng) - 2),
                             u(rng), 10 * u(rng));
    double prev = predict_rectified(p, 1);
    for (double D = 2; D < 1e9; D *= 2) {
      const double cur = predict_rectified(p, D);
      CHECK(cur < prev);
      CHECK(cur > p.E);
      prev = cur;
    }
  }
  // Approach to the pure power law once D^beta dominates F.
  const auto p = surrogate(2, 0.05, 0.6, 50);
  double last = std::numeric_limits<double>::infinity();
  for (double D = 1e4; D <= 1e12; D *= 100) {
    const double gap = std::abs(predict_rectified(p, D) - p.E - p.B * std::pow(D, -p.beta));
    CHECK(gap < last);
    last = gap;
  }
  CHECK(last < 1e-12);
}

TEST_CASE("log-sum-exp identity and objective") {
  CHECK(log_sum_exp(1.5, -std::numeric_limits<double>::infinity()) == 1.5);
  CHECK(log_sum_exp(0.0, 0.0) == doctest::Approx(std::log(2.0)));
  CHECK(log_sum_exp(1000.0, 1000.0) == doctest::Approx(1000.0 + std::log(2.0)));

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto p = surrogate(std::exp(6 * u(rng) - 3), trial % 7 == 0 ? 0.0 : u(rng), 0.05 + 2 * u(rng),
                             std::exp(10 * u(rng) - 3), u(rng), 5 * u(rng));
    const double D = std::exp(15 * u(rng));
    const double direct = predict_rectified(p, D);
    CHECK(std::abs(std::exp(log_predict_rectified(p, D)) - direct) <= 1e-12 * direct);
  }

  const auto p = surrogate(2, 0.05, 0.6, 50);
  const auto curve = curve_from(p, 5, 12);
  CHECK(lse_objective(p, curve) < 1e-28);

  const double l = predict_rectified(p, 64) * std::exp(-0.1);
  const auto single = make_curve("x", {{64, l, std::nullopt}});
  CHECK(lse_objective(p, single) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(lse_objective(p, single, Penalty::Huber, 1e-3) == doctest::Approx(2e-3 * 0.1 - 1e-6).epsilon(1e-10));
  CHECK(penalty(5e-4, Penalty::Huber, 1e-3) == doctest::Approx(2.5e-7));
  CHECK_THROWS_AS(lse_objective(p, LossCurve{"empty", {}}), InvalidArgument);

  const auto e0 = surrogate(1, 0.0, 0.5, 0.0);
  CHECK(std::isfinite(lse_objective(e0, curve)));
}

TEST_CASE("curve construction") {
  const auto c = make_curve("a", {{64, 0.2, std::nullopt}, {32, 0.3, 5}});
  REQUIRE(c.observations.size() == 2);
  CHECK(c.observations[0].dataset_size == 32);
  CHECK(c.observations[0].steps == 5u);
  CHECK_THROWS_AS(make_curve("a", {{32, 0.2, {}}, {32, 0.3, {}}}), InvalidArgument);
  CHECK_THROWS_AS(make_curve("a", {{32, -0.2, {}}}), InvalidArgument);
  CHECK_THROWS_AS(make_curve("a", {{0, 0.2, {}}}), InvalidArgument);
}

TEST_CASE("transition point and phases") {
  CHECK(transition_point(surrogate(1, 0, 0.5, 100)) == doctest::Approx(1e4));
  CHECK(transition_point(surrogate(1, 0, 0.5, 0)) == 0.0);
  CHECK(transition_point(surrogate(1, 0, 3, 8)) == doctest::Approx(2.0));
  CHECK(classify_phase(surrogate(1, 0, 0.5, 100), 100) == Phase::PrePower);
  CHECK(classify_phase(surrogate(1, 0, 0.5, 100), 1e6) == Phase::Power);
  CHECK(classify_phase(surrogate(1, 0, 0.5, 0), 1) == Phase::Power);
  CHECK(std::string(to_string(Phase::PrePower)) == "pre_power");
}

TEST_CASE("phase slopes") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // Above D* the offset still contributes a factor 1 + 100^-beta; beta >= 0.75 keeps it under 4%.
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = surrogate(std::exp(4 * u(rng) - 2), 0.01 + u(rng), 0.75 + u(rng), std::exp(2 + 8 * u(rng)));
    const double Ds = transition_point(p);
    CHECK(std::abs(log_slope(p, Ds / 100)) < 0.1 * p.beta);
    const double D = 100 * Ds;
    const double bd = p.B * std::pow(D, -p.beta);
    const double implied = -p.beta * bd / (bd + p.E);
    CHECK(rel(log_slope(p, D), implied) < 0.1);
  }
}

TEST_CASE("two-phase fit recovers a noiseless surrogate curve") {
  const auto truth = surrogate(2, 0.05, 0.6, 50);
  const auto curve = curve_from(truth, 5, 20);
  const auto fit = fit_two_phase(curve);
  const auto& f = std::get<SurrogateF>(fit.params.f_mode);
  CHECK(rel(fit.params.B, 2) < 1e-3);
  CHECK(rel(fit.params.E, 0.05) < 1e-3);
  CHECK(rel(fit.params.beta, 0.6) < 1e-3);
  CHECK(rel(f.f0, 50) < 1e-3);
  CHECK(fit.objective_value < 1e-12);
  CHECK_FALSE(fit.degenerate);
  CHECK(fit.n_restarts_used == 16);

  SUBCASE("idempotent refit") {
    const auto again = fit_two_phase(curve_from(fit.params, 5, 20));
    CHECK(again.objective_value <= fit.objective_value + 1e-20);
  }
}

TEST_CASE("fit edge cases") {
  std::vector<LossObservation> flat;
  for (int k = 5; k < 12; ++k) flat.push_back({std::uint64_t{1} << k, 0.3, std::nullopt});
  const auto fit = fit_two_phase(make_curve("flat", flat));
  CHECK(fit.degenerate);
  CHECK(fit.params.E == doctest::Approx(0.3));
  CHECK(fit.params.B <= 1e-6);

  const auto three = curve_from(surrogate(2, 0.05, 0.6, 50), 5, 7);
  CHECK_THROWS_WITH_AS(fit_two_phase(three), doctest::Contains("insufficient points"), InvalidArgument);

  FitConfig kappa;
  kappa.surrogate_kappa = 0.01;
  CHECK(free_parameter_count(kappa) == 5);
  CHECK_THROWS_AS(fit_two_phase(curve_from(surrogate(2, 0.05, 0.6, 50), 5, 8), kappa), InvalidArgument);

  FitConfig grid;
  grid.t_grid_points = 3;
  grid.t_grid_min = 1;
  grid.t_grid_max = 100;
  const auto g = t_grid(grid);
  REQUIRE(g.size() == 3);
  CHECK(g[1] == doctest::Approx(10.0));
}

TEST_CASE("fit under log-noise generalises to held-out sizes") {
  const double sigma = 0.02;
  const auto truth = surrogate(3, 0.1, 0.5, 200);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto noisy = curve_from(truth, 5, 20, sigma, seed);
    std::vector<LossObservation> train, test;
    for (std::size_t i = 0; i < noisy.observations.size(); ++i)
      (i % 4 == 3 ? test : train).push_back(noisy.observations[i]);
    FitConfig cfg;
    cfg.seed = seed;
    const auto fit = fit_two_phase(make_curve("n", train), cfg);
    double se = 0.0;
    for (const auto& o : test) {
      const double d = log_predict_rectified(fit.params, static_cast<double>(o.dataset_size)) - std::log(o.test_loss);
      se += d * d;
    }
    CHECK(std::sqrt(se / static_cast<double>(test.size())) < 3 * sigma);
  }
}

TEST_CASE("kernel-backed fit matches its own generating curve") {
  std::mt19937_64 rng(2);
  auto kernel = std::make_shared<const KernelMatrix>(KernelMatrix::from_entries(test::random_psd(rng, 5, 5)));
  Eigen::VectorXd r0 = test::to_eigen(test::random_vector(rng, 5, 3.0));
  RectifiedParams truth;
  truth.B = 1.5;
  truth.E = 0.02;
  truth.beta = 0.7;
  truth.t = 40;
  truth.f_mode = KernelF{kernel, r0, 0.01};
  const auto curve = curve_from(truth, 3, 16);
  FitConfig cfg;
  cfg.offset = OffsetModel::Kernel;
  cfg.kernel = std::get<KernelF>(truth.f_mode);
  cfg.restarts = 4;
  const auto fit = fit_two_phase(curve, cfg);
  CHECK(fit.objective_value < 1e-10);
  for (const auto& o : curve.observations)
    CHECK(rel(predict_rectified(fit.params, static_cast<double>(o.dataset_size)), o.test_loss) < 1e-4);
}

TEST_CASE("recovery over random draws stays fast") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int ok = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 10; ++trial) {
    const auto truth = surrogate(std::exp(3 * u(rng)), 0.01 + 0.3 * u(rng), 0.3 + 0.6 * u(rng), std::exp(2 + 6 * u(rng)));
    const auto fit = fit_two_phase(curve_from(truth, 5, 20));
    const double f0 = std::get<SurrogateF>(fit.params.f_mode).f0;
    const bool good = rel(fit.params.B, truth.B) < 1e-3 && rel(fit.params.E, truth.E) < 1e-3 &&
                      rel(fit.params.beta, truth.beta) < 1e-3 &&
                      rel(f0, std::get<SurrogateF>(truth.f_mode).f0) < 1e-3;
    ok += good ? 1 : 0;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("10 fits in " << secs << " s");
  CHECK(ok >= 9);
}
