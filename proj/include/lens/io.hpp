#pragma once

// File formats, report serialization, run configuration and run directories.
// Reals are written losslessly: CSV with 17 significant digits, JSON with the
// shortest representation that parses back to the same double. Non-finite
// reals are written as the strings "inf", "-inf" and "nan".

#include "lens/bench.hpp"
#include "lens/bound.hpp"
#include "lens/error.hpp"
#include "lens/fit.hpp"
#include "lens/metrics.hpp"
#include "lens/selection.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lens {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kCurveCsvHeader = "model_id,dataset_size,test_loss,steps,seed";

enum class Format { JSON, CSV };
const char* to_string(Format f);
Format format_from_string(const std::string& name);


// ---------------------------------------------------------------------------
// Curves

struct CurveFileRecord {
  std::string model_id;
  std::uint64_t dataset_size = 0;
  double test_loss = 0.0;
  std::optional<std::uint64_t> steps;
  std::optional<std::int64_t> seed;
  std::size_t line = 0;
};

/// Validated records in file order. Rejects duplicate (model, size, seed).
std::vector<CurveFileRecord> parse_curve_records(std::string_view bytes, Format format);

/// Records grouped by model id (sorted), sizes ascending. Repeated seeds at one
/// size are merged by the geometric mean of their losses.
std::vector<LossCurve> parse_curves(std::string_view bytes, Format format);
std::string write_curves(const std::vector<LossCurve>& curves, Format format);

// ---------------------------------------------------------------------------
// Reports

struct FitReport {
  std::string model_id;
  FitResult result;
};

struct CostReport {
  CostMethod method = CostMethod::FullTuning;
  CostBreakdown breakdown;
};

struct MetricsReport {
  std::size_t n = 0;
  std::optional<double> pearson;
  std::optional<double> relative_accuracy;
  double rmse = 0.0;
};

std::string write_report(const std::vector<FitReport>& reports, Format format);
std::string write_report(const std::vector<SelectionReport>& reports, Format format);
std::string write_report(const Ranking& ranking, Format format);
std::string write_report(const BoundReport& report, Format format);
std::string write_report(const CostReport& report, Format format);
std::string write_report(const MetricsReport& report, Format format);
std::string write_report(const SweepTable& table, Format format);
/// Cost/performance points, CSV `cost,performance`.
std::string write_pareto_csv(const std::vector<CostPoint>& points);

std::vector<FitReport> parse_fit_reports(std::string_view bytes);
std::vector<SelectionReport> parse_selection_reports(std::string_view bytes);
Ranking parse_ranking(std::string_view bytes, Format format);
BoundReport parse_bound_report(std::string_view bytes);
CostReport parse_cost_report(std::string_view bytes, Format format);
MetricsReport parse_metrics_report(std::string_view bytes, Format format);
/// CSV keeps the PearCorr grid only (rows gamma, columns tau).
SweepTable parse_sweep_table(std::string_view bytes, Format format);

// ---------------------------------------------------------------------------
// Toy-network inputs

/// JSON `[{"x": [...], "y": v}, ...]` or CSV with header `x0,...,x{d-1},y`.
Dataset parse_dataset(std::string_view bytes, Format format);
std::string write_dataset(const Dataset& data, Format format);

/// Architecture fields of NetworkSpec plus optional "weights" (default: the
/// seeded initialization) and "pretrained_weights" (default: the weights).
ToyNetwork parse_network(std::string_view json);
std::string write_network(const ToyNetwork& net);

/// model_id -> value from CSV `model_id,value`, a JSON object, or a selection
/// report (its predicted scores).
std::map<std::string, double> parse_score_table(std::string_view bytes, Format format);

// ---------------------------------------------------------------------------
// Cost inputs

struct CostInputModel {
  std::string model_id;
  std::uint64_t param_count = 1;
  std::optional<double> performance;          // for the Pareto table
  std::vector<std::uint64_t> executed_sizes;  // LensLLM; empty reads the selection reports
};

struct CostInputFile {
  std::uint64_t d_full = 0;
  std::uint64_t epochs = 1;
  std::uint64_t hp_rounds = 1;
  double sub_fraction = 0.5;
  std::vector<CostInputModel> models;
  /// Selection report path, relative to the inputs file; may be empty.
  std::string selection_reports;
};

CostInputFile parse_cost_inputs(std::string_view json);

// ---------------------------------------------------------------------------
// Configuration

struct BoundConfig {
  double epsilon = 0.01;
  double xi_constant = 1.0;
  double slack = 1.0;
  std::optional<double> C;     // defaults to the max per-sample loss
  std::vector<double> sigmas;  // per-layer KL noise; empty skips the KL value
};

struct CostConfig {
  std::uint64_t epochs = 1;
  std::uint64_t hp_rounds = 1;
  double sub_fraction = 0.5;
  std::map<std::string, std::uint64_t> param_counts;
};

struct RunConfig {
  FitConfig fit;
  SelectionConfig selection;
  Polarity polarity = Polarity::LossLike;
  bool exact_match = false;  // recorded-curve lookups
  BoundConfig bound;
  CostConfig cost;
  std::uint64_t seed = 0;
  std::string out_dir;
};

/// Missing keys keep their defaults; unknown keys are rejected with their path.
RunConfig parse_run_config(std::string_view json);
/// Canonical form (sorted keys); hashed for the manifest.
std::string write_run_config(const RunConfig& config);

PoolGenSpec parse_pool_spec(std::string_view json);
std::string write_pool_spec(const PoolGenSpec& spec);

// ---------------------------------------------------------------------------
// Files and run directories

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);

struct RunInput {
  std::string name;
  std::string sha256;
};

struct RunManifest {
  std::string run_id;
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<RunInput> inputs;
  std::map<std::string, std::string> versions;
  std::string created_at;  // excluded from reproducibility comparisons
};

/// Deterministic id from command, config hash, seed and input hashes.
std::string make_run_id(const std::string& command, const std::string& config_hash, std::uint64_t seed,
                        const std::vector<RunInput>& inputs);

/// Creates <out_dir>/<run_id>/ and writes manifest.json into it.
std::filesystem::path create_run_dir(const std::filesystem::path& out_dir, const RunManifest& manifest);
std::string write_manifest(const RunManifest& manifest);

/// Library, schema and dependency versions.
std::map<std::string, std::string> component_versions();

}  // namespace lens
