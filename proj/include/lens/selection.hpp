#pragma once

// Progressive halving selection: train on shrinking nested subsets, fit a
// regression in (log size, log loss) space once enough pairs exist, and stop
// when the newest pair deviates from it by more than tau.

#include "lens/fit.hpp"
#include "lens/scaling_law.hpp"

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lens {

struct SizeLossPair {
  double log_size = 0.0;
  double log_loss = 0.0;
};

enum class EstimatorKind { Auto, LogLinear, ScalingLaw };

struct Estimator {
  EstimatorKind kind = EstimatorKind::LogLinear;  // never Auto once fitted
  double slope = 0.0;
  double intercept = 0.0;
  RectifiedParams params;  // ScalingLaw only
  double fit_residual_std = 0.0;

  /// psi(log D): predicted log-loss.
  double operator()(double log_size) const;
};

inline constexpr double kSigmaFloor = 1e-12;
inline constexpr std::size_t kMinScalingLawPairs = 4;

/// Least squares in (log D, log L). Auto picks ScalingLaw from four pairs up.
/// A single pair gives the constant LogLinear estimator through it.
Estimator fit_regressor(const std::vector<SizeLossPair>& pairs, EstimatorKind kind = EstimatorKind::Auto,
                        const FitConfig& fit = {});

enum class SignalNorm { SqrtSigma, Sigma };

/// |log L - psi(log D)| / sqrt(max(sigma, floor)); SignalNorm::Sigma divides by sigma instead.
double stopping_signal(const Estimator& estimator, const SizeLossPair& pair,
                       SignalNorm norm = SignalNorm::SqrtSigma);

/// exp(psi(log D_full)).
double predict_full_score(const Estimator& estimator, double d_full);

// ---------------------------------------------------------------------------
// Providers

struct TrainingSubset {
  std::uint64_t size = 0;
  /// Indices into the full training set; empty unless the provider asks for them.
  std::span<const std::uint64_t> indices;
};

/// Supplies the test loss after training on a subset. Must be safe to call
/// concurrently on distinct subsets.
class CurveProvider {
 public:
  virtual ~CurveProvider() = default;
  /// nullopt when the provider has no data at this size (the curve is exhausted).
  virtual std::optional<double> evaluate(const TrainingSubset& subset) const = 0;
  virtual bool wants_indices() const { return false; }
};

/// Looks up ingested observations. With exact_match off, sizes between two
/// observations are interpolated linearly in log-log space.
class RecordedCurveProvider final : public CurveProvider {
 public:
  explicit RecordedCurveProvider(LossCurve curve, bool exact_match = true);
  std::optional<double> evaluate(const TrainingSubset& subset) const override;

 private:
  LossCurve curve_;
  bool exact_;
};

/// Evaluates ground-truth parameters, with optional multiplicative log-normal
/// noise that depends only on (seed, size).
class SyntheticProvider final : public CurveProvider {
 public:
  SyntheticProvider(RectifiedParams truth, double log_noise_sigma = 0.0, std::uint64_t seed = 0);
  std::optional<double> evaluate(const TrainingSubset& subset) const override;
  const RectifiedParams& truth() const { return truth_; }

 private:
  RectifiedParams truth_;
  double sigma_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Algorithm

enum class BreakReason { SignalExceeded, FloorReached, CurveExhausted };

struct SelectionConfig {
  std::size_t gamma = 3;
  double tau = 3.0;
  /// Smallest size that may be trained; 0 selects max(32, D_full / 2^10).
  std::uint64_t floor = 0;
  /// First trained size as a fraction of D_full.
  double start_fraction = 1.0;
  EstimatorKind estimator = EstimatorKind::Auto;
  SignalNorm signal_norm = SignalNorm::SqrtSigma;
  FitConfig fit;
  std::uint64_t seed = 0;
};

struct TraceEntry {
  std::uint64_t size = 0;
  double loss = 0.0;
  std::optional<double> signal;
  /// |log L_j - psi(log D_j)| over the pairs psi was fitted on.
  std::vector<double> deviations;
};

struct SelectionReport {
  std::string model_id;
  std::uint64_t d_full = 0;
  double predicted_score = 0.0;
  std::size_t iterations = 0;  // raw a at termination
  double data_fraction = 0.0;  // smallest trained size / D_full
  BreakReason break_reason = BreakReason::FloorReached;
  std::vector<TraceEntry> trace;
  Estimator estimator;
};

/// Resolved floor for a configuration.
std::uint64_t effective_floor(const SelectionConfig& config, std::uint64_t d_full);

/// Provider errors are rethrown as SelectionFailed carrying the partial report.
class SelectionFailed : public Error {
 public:
  SelectionFailed(const std::string& what, SelectionReport partial);
  const SelectionReport& partial_report() const { return partial_; }

 private:
  SelectionReport partial_;
};

SelectionReport progressive_select(const CurveProvider& provider, std::uint64_t d_full,
                                   const SelectionConfig& config = {}, const std::string& model_id = "");

// ---------------------------------------------------------------------------
// Candidate pools

struct Candidate {
  std::string model_id;
  std::uint64_t param_count = 1;
  std::shared_ptr<const CurveProvider> provider;
  std::optional<double> ground_truth;  // full-data performance, when known
};

struct CandidatePool {
  std::uint64_t d_full = 0;
  std::vector<Candidate> models;
};

/// Unique ids, positive parameter counts, non-null providers, d_full >= 1.
void validate(const CandidatePool& pool);

/// Runs progressive_select on every candidate with the same configuration.
std::vector<SelectionReport> select_pool(const CandidatePool& pool, const SelectionConfig& config);

// ---------------------------------------------------------------------------
// Ranking

enum class Polarity { LossLike, ScoreLike };

struct RankedEntry {
  std::string model_id;
  double score = 0.0;
};

struct Ranking {
  std::vector<RankedEntry> entries;  // best first
  std::string selected;
};

/// LossLike ranks ascending r, ScoreLike descending; ties by model_id.
Ranking rank_pool(const std::vector<SelectionReport>& reports, Polarity polarity = Polarity::LossLike);

const char* to_string(BreakReason reason);
const char* to_string(EstimatorKind kind);
const char* to_string(Polarity polarity);
const char* to_string(SignalNorm norm);
BreakReason break_reason_from_string(const std::string& name);
EstimatorKind estimator_kind_from_string(const std::string& name);
Polarity polarity_from_string(const std::string& name);
SignalNorm signal_norm_from_string(const std::string& name);

}  // namespace lens
