#pragma once

// Small in-repo networks with exact derivatives: a linear model, a
// fully-connected MLP and a single attention block. They stand in for the
// fine-tuned transformer when kernels, Hessians and bounds must be computed
// exactly.

#include "lens/error.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lens {

enum class Architecture { Linear, MLP, ToyAttention };
enum class Activation { Tanh, SmoothReLU, ReLU };

/// Sharpness k of the smoothed ReLU log(1 + e^{kx}) / k.
inline constexpr double kSmoothReluSharpness = 10.0;

/// Architecture description.
///
/// layer_dims meaning per architecture:
///   Linear        {d_in, 1}
///   MLP           {d_in, h_1, ..., h_k, 1}
///   ToyAttention  {seq_len, d_model, d_ff}; input is seq_len * d_model values,
///                 token-major.
struct NetworkSpec {
  Architecture architecture = Architecture::MLP;
  std::vector<std::size_t> layer_dims;
  Activation activation = Activation::Tanh;
  double init_scale = 1.0;
  std::uint64_t seed = 0;
};

struct LayerShape {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;  // into the flat parameter vector
  std::size_t size() const { return rows * cols; }
};

/// Throws InvalidArgument when the spec is malformed.
void validate(const NetworkSpec& spec);
std::vector<LayerShape> layer_shapes(const NetworkSpec& spec);
std::size_t input_dim(const NetworkSpec& spec);

struct Sample {
  std::vector<double> x;
  double y = 0.0;
};
using Dataset = std::vector<Sample>;

/// Parameters are stored flat, layer after layer, each layer row-major.
class ToyNetwork {
 public:
  /// Network with the given weights and no pretrained snapshot.
  static ToyNetwork from_weights(NetworkSpec spec, std::vector<double> weights);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<LayerShape>& layers() const { return layers_; }
  std::size_t param_count() const { return weights_.size(); }
  std::size_t input_dim() const { return input_dim_; }

  std::span<const double> weights() const { return weights_; }
  std::span<double> weights() { return weights_; }
  std::span<const double> layer_weights(std::size_t layer) const;

  bool has_pretrained() const { return pretrained_.has_value(); }
  /// Snapshot the weights were fine-tuned from. Throws if absent.
  std::span<const double> pretrained() const;
  /// Flattened W_i - W_i^(s) for one layer.
  Eigen::VectorXd displacement(std::size_t layer) const;

  /// Copy whose pretrained snapshot is the current weights; used to start
  /// fine-tuning after a source-task pre-training run.
  ToyNetwork rebased() const;

 private:
  friend ToyNetwork build_toy_network(const NetworkSpec& spec);
  ToyNetwork(NetworkSpec spec, std::vector<double> weights);

  NetworkSpec spec_;
  std::vector<LayerShape> layers_;
  std::size_t input_dim_ = 0;
  std::vector<double> weights_;
  std::optional<std::vector<double>> pretrained_;
};

/// Deterministic Gaussian init, N(0, init_scale^2 / fan_in) per weight.
ToyNetwork build_toy_network(const NetworkSpec& spec);

double forward(const ToyNetwork& net, std::span<const double> x);
Eigen::VectorXd param_gradient(const ToyNetwork& net, std::span<const double> x);

/// Outputs over a dataset, f(X).
Eigen::VectorXd outputs(const ToyNetwork& net, const Dataset& data);
/// f(X) - y.
Eigen::VectorXd residuals(const ToyNetwork& net, const Dataset& data);
/// Mean of (f(x) - y)^2.
double mean_squared_error(const ToyNetwork& net, const Dataset& data);

/// Per layer, every vector the layer's matrix is applied to over the dataset
/// (one row each; attention layers see one row per token).
std::vector<Eigen::MatrixXd> layer_inputs(const ToyNetwork& net, const Dataset& data);

// ---------------------------------------------------------------------------
// Training

struct LossTrace {
  /// (step, mean squared error before that step's update)
  std::vector<std::pair<std::size_t, double>> points;
};

class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, LossTrace partial)
      : NumericalError(what), partial_(std::move(partial)) {}
  const LossTrace& partial_trace() const { return partial_; }

 private:
  LossTrace partial_;
};

struct TrainResult {
  ToyNetwork net;
  LossTrace trace;
};

/// Loss above which a run is declared divergent.
inline constexpr double kDivergenceLoss = 1e12;

/// Full-batch gradient descent on J = (1/2n) sum (f(x_i) - y_i)^2 with step
/// `lr`. The trace has steps + 1 entries. Throws TrainingDiverged.
TrainResult train_sgd(ToyNetwork net, const Dataset& data, double lr, std::size_t steps);

/// Kernel-flow rate matching train_sgd: residuals evolve as
/// r <- (I - (lr/n) Theta) r, so eta = lr / n.
inline double kernel_rate(double lr, std::size_t n) { return lr / static_cast<double>(n); }

/// Damped Gauss-Newton on the residuals until the mean squared error falls
/// below `tolerance`. Used to produce near-interpolating nets; returns
/// std::nullopt when the tolerance is not reached in `max_iters`.
std::optional<ToyNetwork> fit_to_tolerance(ToyNetwork net, const Dataset& data, double tolerance,
                                           std::size_t max_iters = 500);

// ---------------------------------------------------------------------------
// Diagnostics for the smoothness / boundedness assumptions

struct DiagnosticsReport {
  double max_abs_loss = 0.0;        // C: max per-sample 1/2 (f - y)^2
  double max_input_norm = 0.0;      // B
  double min_gradient_norm = 0.0;   // delta: min ||grad_theta f||
  std::optional<double> layer_norm_scale_ratio;  // worst RMS of normalized rows
  std::optional<double> max_softmax_row_norm;    // M: max row infinity-norm
};

DiagnosticsReport assumption_diagnostics(const ToyNetwork& net, const Dataset& data);

const char* to_string(Architecture a);
const char* to_string(Activation a);
Architecture architecture_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);

}  // namespace lens
