#pragma once

// Ground-truth generators and harnesses: synthetic curves and pools with known
// parameters, toy-network fine-tuning curves, and gamma/tau ablation sweeps.

#include "lens/network.hpp"
#include "lens/scaling_law.hpp"
#include "lens/selection.hpp"
#include "lens/task.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lens {

/// first, 2 first, 4 first, ... up to and including the last value <= last.
std::vector<std::uint64_t> doubling_sizes(std::uint64_t first = 32, std::uint64_t last = 16384);

struct CurveGenSpec {
  std::string model_id = "synthetic";
  RectifiedParams true_params;
  std::vector<std::uint64_t> sizes = doubling_sizes();
  double log_noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// log L(D) = log L_true(D) + N(0, sigma^2), noise drawn as in SyntheticProvider.
LossCurve generate_curve(const CurveGenSpec& spec);

struct ParamRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct PoolGenSpec {
  std::size_t n_models = 20;
  ParamRange B{1.0, 100.0};      // log-uniform
  ParamRange E{0.05, 1.0};       // uniform
  ParamRange beta{0.3, 0.9};     // uniform
  ParamRange F0{1.0, 1000.0};    // log-uniform
  ParamRange param_count{1e6, 1e9};  // log-uniform
  std::uint64_t d_full = 16384;
  double log_noise_sigma = 0.01;
  std::uint64_t seed = 0;
};

struct GeneratedPool {
  CandidatePool pool;                  // Synthetic providers, ground truth set
  std::vector<RectifiedParams> truth;  // per model, in pool order
};

/// Ground truth is the noiseless loss at d_full.
GeneratedPool generate_pool(const PoolGenSpec& spec);

// ---------------------------------------------------------------------------
// Toy fine-tuning

struct ToyTrainConfig {
  double lr = 0.05;
  std::size_t steps = 200;
  /// 0 trains full-batch; otherwise each step uses the next contiguous batch.
  std::size_t batch_size = 0;
  /// Held-out share of the generated data.
  double test_fraction = 0.2;
};

/// Trains a copy of `pretrained` on the requested subset of `train` and
/// returns the mean squared error on `test`.
class ToyTrainerProvider final : public CurveProvider {
 public:
  ToyTrainerProvider(ToyNetwork pretrained, Dataset train, Dataset test, ToyTrainConfig config);
  std::optional<double> evaluate(const TrainingSubset& subset) const override;
  bool wants_indices() const override { return true; }
  std::size_t capacity() const { return train_.size(); }

 private:
  ToyNetwork pretrained_;
  Dataset train_;
  Dataset test_;
  ToyTrainConfig config_;
};

/// Training and held-out test sets for a target task: the test share is
/// test_fraction of the total, the training part holds `train_size` samples.
std::pair<Dataset, Dataset> split_task_data(const RegressionTask& task, std::size_t train_size,
                                            double test_fraction, std::uint64_t seed);

class CurveGenerationFailed : public NumericalError {
 public:
  CurveGenerationFailed(const std::string& what, LossCurve partial)
      : NumericalError(what), partial_(std::move(partial)) {}
  const LossCurve& partial_curve() const { return partial_; }

 private:
  LossCurve partial_;
};

/// Test loss after fine-tuning `pretrained` on nested prefixes of one training
/// set, one observation per size. Divergence throws CurveGenerationFailed
/// with the sizes completed so far.
LossCurve toy_finetune_curve(const ToyNetwork& pretrained, const RegressionTask& target,
                             const std::vector<std::uint64_t>& sizes, const ToyTrainConfig& config,
                             std::uint64_t seed, std::string model_id = "toy");

struct ToyCandidate {
  std::string model_id;
  ToyNetwork pretrained;
};

struct ToyPoolSpec {
  std::vector<ToyCandidate> models;
  RegressionTask target;
  std::uint64_t d_full = 256;
  ToyTrainConfig train;
  std::uint64_t seed = 0;
};

/// ToyTrainer providers over shared data; ground truth is each model's test
/// loss after training on all d_full samples.
CandidatePool make_toy_pool(const ToyPoolSpec& spec);

// ---------------------------------------------------------------------------
// Ablation

struct SweepSpec {
  std::vector<std::size_t> gammas{3, 4, 5};
  std::vector<double> taus{1, 2, 3, 4, 5};
  SelectionConfig base;
};

struct SweepCell {
  std::size_t gamma = 0;
  double tau = 0.0;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<double> pearson;
  std::optional<double> relative_accuracy;
  std::string error;  // empty when the cell succeeded
};

struct SweepTable {
  std::vector<std::size_t> gammas;
  std::vector<double> taus;
  std::vector<double> lrs;            // empty unless a toy sweep
  std::vector<std::size_t> batch_sizes;
  std::vector<SweepCell> cells;       // gamma-major, then tau (then lr, batch)
};

/// Scores of one selection run against the pool's ground truth.
struct PoolScore {
  double pearson = 0.0;
  double relative_accuracy = 0.0;
};

/// PearCorr of predicted vs true full-data losses, RelAcc of the top-ranked
/// model (lower loss is better). Throws on missing ground truth.
PoolScore score_selection(const CandidatePool& pool, const std::vector<SelectionReport>& reports);

/// Every (gamma, tau) cell runs progressive_select on the whole pool with its
/// own seed; failures are recorded in the cell and the sweep continues.
SweepTable ablation_sweep(const CandidatePool& pool, const SweepSpec& spec);

/// Toy sweep over (gamma, tau, lr, batch); the pool is rebuilt per (lr, batch).
SweepTable ablation_sweep(const ToyPoolSpec& pool, const SweepSpec& spec, const std::vector<double>& lrs,
                          const std::vector<std::size_t>& batch_sizes);

/// Largest minus smallest PearCorr over successful cells; nullopt if none.
std::optional<double> pearson_spread(const SweepTable& table);

}  // namespace lens
