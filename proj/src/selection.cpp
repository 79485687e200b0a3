#include "lens/selection.hpp"

#include "lens/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace lens {

double Estimator::operator()(double log_size) const {
  if (kind == EstimatorKind::ScalingLaw) return log_predict_rectified(params, std::exp(log_size));
  return slope * log_size + intercept;
}

namespace {

Estimator fit_log_linear(const std::vector<SizeLossPair>& pairs) {
  if (pairs.size() < 2) throw InvalidArgument("regressor: log-linear fit needs at least 2 pairs");
  const auto n = static_cast<double>(pairs.size());
  double mx = 0.0, my = 0.0;
  for (const auto& p : pairs) {
    mx += p.log_size;
    my += p.log_loss;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& p : pairs) {
    sxx += (p.log_size - mx) * (p.log_size - mx);
    sxy += (p.log_size - mx) * (p.log_loss - my);
  }
  if (!(sxx > 0.0)) throw InvalidArgument("regressor: all pairs share the same size");
  Estimator e;
  e.kind = EstimatorKind::LogLinear;
  e.slope = sxy / sxx;
  e.intercept = my - e.slope * mx;
  double ss = 0.0;
  for (const auto& p : pairs) {
    const double r = p.log_loss - e(p.log_size);
    ss += r * r;
  }
  e.fit_residual_std = std::sqrt(ss / n);
  return e;
}

Estimator fit_scaling_law(const std::vector<SizeLossPair>& pairs, const FitConfig& cfg) {
  if (pairs.size() < kMinScalingLawPairs) throw InvalidArgument("regressor: scaling-law fit needs at least 4 pairs");
  std::vector<LossObservation> obs;
  obs.reserve(pairs.size());
  for (const auto& p : pairs) {
    const double size = std::round(std::exp(p.log_size));
    if (!(size >= 1.0)) throw InvalidArgument("regressor: size below 1");
    obs.push_back({static_cast<std::uint64_t>(size), std::exp(p.log_loss), std::nullopt});
  }
  const auto fit = fit_two_phase(make_curve("psi", std::move(obs)), cfg);
  Estimator e;
  e.kind = EstimatorKind::ScalingLaw;
  e.params = fit.params;
  e.fit_residual_std = fit.residual_std;
  return e;
}

Estimator constant_estimator(const SizeLossPair& pair) {
  Estimator e;
  e.kind = EstimatorKind::LogLinear;
  e.intercept = pair.log_loss;
  return e;
}

}  // namespace

Estimator fit_regressor(const std::vector<SizeLossPair>& pairs, EstimatorKind kind, const FitConfig& fit) {
  for (const auto& p : pairs)
    if (!std::isfinite(p.log_size) || !std::isfinite(p.log_loss)) throw InvalidArgument("regressor: non-finite pair");
  if (kind == EstimatorKind::Auto)
    kind = pairs.size() >= kMinScalingLawPairs ? EstimatorKind::ScalingLaw : EstimatorKind::LogLinear;
  if (kind == EstimatorKind::ScalingLaw) return fit_scaling_law(pairs, fit);
  return fit_log_linear(pairs);
}

double stopping_signal(const Estimator& estimator, const SizeLossPair& pair, SignalNorm norm) {
  const double sigma = std::max(estimator.fit_residual_std, kSigmaFloor);
  const double dev = std::abs(pair.log_loss - estimator(pair.log_size));
  return dev / (norm == SignalNorm::SqrtSigma ? std::sqrt(sigma) : sigma);
}

double predict_full_score(const Estimator& estimator, double d_full) {
  if (!(d_full > 0.0)) throw InvalidArgument("full score: D_full must be positive");
  return std::exp(estimator(std::log(d_full)));
}

// ---------------------------------------------------------------------------

RecordedCurveProvider::RecordedCurveProvider(LossCurve curve, bool exact_match)
    : curve_(make_curve(curve.model_id, std::move(curve.observations))), exact_(exact_match) {
  if (curve_.observations.empty()) throw InvalidArgument("recorded provider: empty curve");
}

std::optional<double> RecordedCurveProvider::evaluate(const TrainingSubset& subset) const {
  const auto& obs = curve_.observations;
  const auto it = std::lower_bound(obs.begin(), obs.end(), subset.size,
                                   [](const LossObservation& o, std::uint64_t s) { return o.dataset_size < s; });
  if (it != obs.end() && it->dataset_size == subset.size) return it->test_loss;
  if (it == obs.begin()) return std::nullopt;
  if (it == obs.end())
    throw InvalidArgument("recorded provider: curve '" + curve_.model_id + "' has no data at size " +
                          std::to_string(subset.size) + " (largest recorded is " +
                          std::to_string(obs.back().dataset_size) + ")");
  if (exact_)
    throw InvalidArgument("recorded provider: curve '" + curve_.model_id + "' has no observation at size " +
                          std::to_string(subset.size));
  const auto lo = std::prev(it);
  const double x0 = std::log(static_cast<double>(lo->dataset_size));
  const double x1 = std::log(static_cast<double>(it->dataset_size));
  const double f = (std::log(static_cast<double>(subset.size)) - x0) / (x1 - x0);
  return std::exp((1.0 - f) * std::log(lo->test_loss) + f * std::log(it->test_loss));
}

SyntheticProvider::SyntheticProvider(RectifiedParams truth, double log_noise_sigma, std::uint64_t seed)
    : truth_(std::move(truth)), sigma_(log_noise_sigma), seed_(seed) {
  validate(truth_);
  if (!(sigma_ >= 0.0)) throw InvalidArgument("synthetic provider: noise must be nonnegative");
}

std::optional<double> SyntheticProvider::evaluate(const TrainingSubset& subset) const {
  if (subset.size == 0) return std::nullopt;
  const double clean = predict_rectified(truth_, static_cast<double>(subset.size));
  if (sigma_ == 0.0) return clean;
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                    static_cast<std::uint32_t>(subset.size), static_cast<std::uint32_t>(subset.size >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> nd(0.0, sigma_);
  return clean * std::exp(nd(rng));
}

// ---------------------------------------------------------------------------

SelectionFailed::SelectionFailed(const std::string& what, SelectionReport partial)
    : Error(what), partial_(std::move(partial)) {}

std::uint64_t effective_floor(const SelectionConfig& config, std::uint64_t d_full) {
  if (config.floor > 0) return config.floor;
  return std::max<std::uint64_t>(32, d_full >> 10);
}

SelectionReport progressive_select(const CurveProvider& provider, std::uint64_t d_full, const SelectionConfig& cfg,
                                   const std::string& model_id) {
  if (d_full == 0) throw InvalidArgument("selection: D_full must be positive");
  if (cfg.gamma < 2) throw InvalidArgument("selection: gamma must be at least 2");
  if (!(cfg.tau > 0.0)) throw InvalidArgument("selection: tau must be positive");
  if (!(cfg.start_fraction > 0.0 && cfg.start_fraction <= 1.0))
    throw InvalidArgument("selection: start fraction must lie in (0, 1]");
  if (cfg.estimator == EstimatorKind::ScalingLaw && cfg.gamma < kMinScalingLawPairs)
    throw InvalidArgument("selection: the scaling-law estimator needs gamma >= 4");

  const std::uint64_t floor = effective_floor(cfg, d_full);
  std::uint64_t size = static_cast<std::uint64_t>(std::floor(cfg.start_fraction * static_cast<double>(d_full)));
  if (size < floor || size == 0)
    throw InvalidArgument("selection: starting size " + std::to_string(size) + " is below the floor " +
                          std::to_string(floor));

  std::vector<std::uint64_t> order;
  if (provider.wants_indices()) {
    order.resize(d_full);
    std::iota(order.begin(), order.end(), std::uint64_t{0});
    std::mt19937_64 rng(cfg.seed);
    std::shuffle(order.begin(), order.end(), rng);
  }

  SelectionReport report;
  report.model_id = model_id;
  report.d_full = d_full;
  std::vector<SizeLossPair> collected;
  std::optional<Estimator> psi;
  std::uint64_t smallest = 0;
  std::size_t a = 1;

  for (;;) {
    TrainingSubset subset{size, {}};
    if (!order.empty()) subset.indices = std::span<const std::uint64_t>(order.data(), size);
    std::optional<double> loss;
    try {
      loss = provider.evaluate(subset);
    } catch (const std::exception& e) {
      report.iterations = a;
      report.data_fraction = smallest ? static_cast<double>(smallest) / static_cast<double>(d_full) : 0.0;
      throw SelectionFailed("selection: provider failed at size " + std::to_string(size) + ": " + e.what(),
                            std::move(report));
    }
    if (!loss) {
      if (collected.empty()) {
        report.iterations = a;
        throw SelectionFailed("selection: provider has no data at the starting size", std::move(report));
      }
      report.break_reason = BreakReason::CurveExhausted;
      break;
    }
    if (!(*loss > 0.0) || !std::isfinite(*loss)) {
      report.iterations = a;
      throw SelectionFailed("selection: provider returned a non-positive loss at size " + std::to_string(size),
                            std::move(report));
    }

    TraceEntry entry{size, *loss, std::nullopt, {}};
    const SizeLossPair pair{std::log(static_cast<double>(size)), std::log(*loss)};
    smallest = size;
    if (collected.size() >= cfg.gamma) {
      psi = fit_regressor(collected, cfg.estimator, cfg.fit);
      for (const auto& c : collected) entry.deviations.push_back(std::abs(c.log_loss - (*psi)(c.log_size)));
      const double signal = stopping_signal(*psi, pair, cfg.signal_norm);
      entry.signal = signal;
      report.trace.push_back(std::move(entry));
      if (signal > cfg.tau) {
        report.break_reason = BreakReason::SignalExceeded;
        break;
      }
    } else {
      report.trace.push_back(std::move(entry));
    }
    collected.push_back(pair);
    psi.reset();

    const std::uint64_t next = size / 2;
    if (next < floor || next == 0) {
      report.break_reason = BreakReason::FloorReached;
      break;
    }
    size = next;
    ++a;
  }

  if (!psi) {
    if (collected.size() == 1) {
      psi = constant_estimator(collected.front());
    } else {
      const EstimatorKind kind =
          cfg.estimator == EstimatorKind::ScalingLaw && collected.size() < kMinScalingLawPairs ? EstimatorKind::LogLinear
                                                                                               : cfg.estimator;
      psi = fit_regressor(collected, kind, cfg.fit);
    }
  }
  report.estimator = *psi;
  report.iterations = a;
  report.data_fraction = static_cast<double>(smallest) / static_cast<double>(d_full);
  report.predicted_score = predict_full_score(*psi, static_cast<double>(d_full));
  return report;
}

// ---------------------------------------------------------------------------

void validate(const CandidatePool& pool) {
  if (pool.d_full == 0) throw InvalidArgument("pool: d_full must be at least 1");
  if (pool.models.empty()) throw InvalidArgument("pool: no candidates");
  std::set<std::string> ids;
  for (const auto& m : pool.models) {
    if (!ids.insert(m.model_id).second) throw InvalidArgument("pool: duplicate model id '" + m.model_id + "'");
    if (m.param_count == 0) throw InvalidArgument("pool: parameter count must be positive for '" + m.model_id + "'");
    if (!m.provider) throw InvalidArgument("pool: missing provider for '" + m.model_id + "'");
  }
}

std::vector<SelectionReport> select_pool(const CandidatePool& pool, const SelectionConfig& config) {
  validate(pool);
  std::vector<SelectionReport> out;
  out.reserve(pool.models.size());
  for (const auto& m : pool.models) out.push_back(progressive_select(*m.provider, pool.d_full, config, m.model_id));
  return out;
}

Ranking rank_pool(const std::vector<SelectionReport>& reports, Polarity polarity) {
  if (reports.empty()) throw InvalidArgument("rank: empty pool");
  std::set<std::string> ids;
  Ranking out;
  for (const auto& r : reports) {
    if (!ids.insert(r.model_id).second) throw InvalidArgument("rank: duplicate model id '" + r.model_id + "'");
    out.entries.push_back({r.model_id, r.predicted_score});
  }
  std::sort(out.entries.begin(), out.entries.end(), [polarity](const RankedEntry& x, const RankedEntry& y) {
    if (x.score != y.score) return polarity == Polarity::LossLike ? x.score < y.score : x.score > y.score;
    return x.model_id < y.model_id;
  });
  out.selected = out.entries.front().model_id;
  return out;
}

// ---------------------------------------------------------------------------

const char* to_string(BreakReason reason) {
  switch (reason) {
    case BreakReason::SignalExceeded: return "signal_exceeded";
    case BreakReason::FloorReached: return "floor_reached";
    case BreakReason::CurveExhausted: return "curve_exhausted";
  }
  return "?";
}

const char* to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Auto: return "auto";
    case EstimatorKind::LogLinear: return "log_linear";
    case EstimatorKind::ScalingLaw: return "scaling_law";
  }
  return "?";
}

const char* to_string(Polarity polarity) { return polarity == Polarity::LossLike ? "loss" : "score"; }

const char* to_string(SignalNorm norm) { return norm == SignalNorm::SqrtSigma ? "sqrt_sigma" : "sigma"; }

BreakReason break_reason_from_string(const std::string& name) {
  for (auto r : {BreakReason::SignalExceeded, BreakReason::FloorReached, BreakReason::CurveExhausted})
    if (name == to_string(r)) return r;
  throw InvalidArgument("unknown break reason '" + name + "'");
}

EstimatorKind estimator_kind_from_string(const std::string& name) {
  for (auto k : {EstimatorKind::Auto, EstimatorKind::LogLinear, EstimatorKind::ScalingLaw})
    if (name == to_string(k)) return k;
  throw InvalidArgument("unknown estimator kind '" + name + "'");
}

Polarity polarity_from_string(const std::string& name) {
  if (name == "loss") return Polarity::LossLike;
  if (name == "score") return Polarity::ScoreLike;
  throw InvalidArgument("unknown polarity '" + name + "' (expected loss or score)");
}

SignalNorm signal_norm_from_string(const std::string& name) {
  if (name == "sqrt_sigma") return SignalNorm::SqrtSigma;
  if (name == "sigma") return SignalNorm::Sigma;
  throw InvalidArgument("unknown signal norm '" + name + "'");
}

}  // namespace lens
