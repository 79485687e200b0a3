#pragma once

// Selection-quality metrics and the training-compute cost model.

#include <cstdint>
#include <string>
#include <vector>

namespace lens {

struct SelectionReport;

/// Sample Pearson correlation. Throws InvalidArgument on length mismatch,
/// fewer than two points, or a constant input ("undefined correlation").
double pearson_corr(const std::vector<double>& xs, const std::vector<double>& ys);

/// (selected - worst) / (best - worst) with higher performance better.
double relative_accuracy(double selected_perf, const std::vector<double>& pool_perfs);

double rmse(const std::vector<double>& pred, const std::vector<double>& actual);

// ---------------------------------------------------------------------------
// Cost

struct CostInputs {
  std::uint64_t epochs = 1;
  std::uint64_t hp_rounds = 1;
  std::uint64_t param_count = 1;
  std::uint64_t dataset_size = 1;
};

/// 6 t h N D floating point operations.
double run_cost(const CostInputs& c);

enum class CostMethod { FullTuning, SubTuning, LensLLM };

struct PoolMember {
  std::string model_id;
  CostInputs inputs;
  /// LensLLM only: sizes actually trained, largest first, each half the previous.
  std::vector<std::uint64_t> executed_sizes;
};

struct MethodCostSpec {
  CostMethod method = CostMethod::FullTuning;
  double sub_fraction = 1.0;  // SubTuning s in (0, 1)
  std::vector<PoolMember> pool;
};

struct CostBreakdown {
  double total = 0.0;
  std::vector<std::pair<std::string, double>> per_model;
};

CostBreakdown method_cost(const MethodCostSpec& spec);

/// Trained sizes of a selection run in execution order.
std::vector<std::uint64_t> executed_sizes(const SelectionReport& report);

/// Halving chain from `start` down to and including the first size >= floor.
std::vector<std::uint64_t> halving_chain(std::uint64_t start, std::uint64_t floor);

struct CostPoint {
  double cost = 0.0;
  double performance = 0.0;
};

/// Points not dominated by any other (no cheaper-or-equal point with
/// higher-or-equal performance, strictly better in one), sorted by cost.
std::vector<CostPoint> pareto_front(const std::vector<CostPoint>& points);

const char* to_string(CostMethod method);
CostMethod cost_method_from_string(const std::string& name);

}  // namespace lens
