#include "lens/network.hpp"

#include "lens/network_eval.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace lens {

void validate(const NetworkSpec& spec) {
  const auto& dims = spec.layer_dims;
  if (dims.empty()) throw InvalidArgument("network spec: layer_dims is empty");
  if (std::any_of(dims.begin(), dims.end(), [](std::size_t d) { return d == 0; }))
    throw InvalidArgument("network spec: layer dimensions must be positive");
  if (!(spec.init_scale > 0.0) || !std::isfinite(spec.init_scale))
    throw InvalidArgument("network spec: init_scale must be positive");
  switch (spec.architecture) {
    case Architecture::Linear:
      if (dims.size() != 2 || dims[1] != 1)
        throw InvalidArgument("network spec: Linear expects layer_dims {d_in, 1}");
      break;
    case Architecture::MLP:
      if (dims.size() < 2 || dims.back() != 1)
        throw InvalidArgument("network spec: MLP expects layer_dims {d_in, ..., 1}");
      break;
    case Architecture::ToyAttention:
      if (dims.size() != 3)
        throw InvalidArgument("network spec: ToyAttention expects layer_dims {seq_len, d_model, d_ff}");
      break;
  }
}

std::vector<LayerShape> layer_shapes(const NetworkSpec& spec) {
  validate(spec);
  std::vector<LayerShape> out;
  std::size_t offset = 0;
  auto push = [&](std::string name, std::size_t rows, std::size_t cols) {
    out.push_back({std::move(name), rows, cols, offset});
    offset += rows * cols;
  };
  const auto& dims = spec.layer_dims;
  if (spec.architecture == Architecture::ToyAttention) {
    const std::size_t d = dims[1], ff = dims[2];
    push("W_Q", d, d);
    push("W_K", d, d);
    push("W_V", d, d);
    push("W_1", ff, d);
    push("W_2", d, ff);
    push("W_out", 1, d);
  } else {
    for (std::size_t i = 1; i < dims.size(); ++i) push("W_" + std::to_string(i), dims[i], dims[i - 1]);
  }
  return out;
}

std::size_t input_dim(const NetworkSpec& spec) {
  validate(spec);
  if (spec.architecture == Architecture::ToyAttention) return spec.layer_dims[0] * spec.layer_dims[1];
  return spec.layer_dims[0];
}

ToyNetwork::ToyNetwork(NetworkSpec spec, std::vector<double> weights)
    : spec_(std::move(spec)),
      layers_(layer_shapes(spec_)),
      input_dim_(lens::input_dim(spec_)),
      weights_(std::move(weights)) {
  const std::size_t expected = layers_.back().offset + layers_.back().size();
  if (weights_.size() != expected)
    throw InvalidArgument("network: expected " + std::to_string(expected) + " weights, got " +
                          std::to_string(weights_.size()));
}

ToyNetwork ToyNetwork::from_weights(NetworkSpec spec, std::vector<double> weights) {
  return ToyNetwork(std::move(spec), std::move(weights));
}

std::span<const double> ToyNetwork::layer_weights(std::size_t layer) const {
  if (layer >= layers_.size()) throw InvalidArgument("network: layer index out of range");
  return std::span<const double>(weights_).subspan(layers_[layer].offset, layers_[layer].size());
}

std::span<const double> ToyNetwork::pretrained() const {
  if (!pretrained_) throw InvalidArgument("network has no pretrained snapshot");
  return *pretrained_;
}

Eigen::VectorXd ToyNetwork::displacement(std::size_t layer) const {
  const auto w = layer_weights(layer);
  const auto p = pretrained().subspan(layers_[layer].offset, layers_[layer].size());
  Eigen::VectorXd v(static_cast<Eigen::Index>(w.size()));
  for (std::size_t i = 0; i < w.size(); ++i) v[static_cast<Eigen::Index>(i)] = w[i] - p[i];
  return v;
}

ToyNetwork ToyNetwork::rebased() const {
  ToyNetwork copy = *this;
  copy.pretrained_ = weights_;
  return copy;
}

ToyNetwork build_toy_network(const NetworkSpec& spec) {
  const auto layers = layer_shapes(spec);
  std::vector<double> w(layers.back().offset + layers.back().size());
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& l : layers) {
    const double sd = spec.init_scale / std::sqrt(static_cast<double>(l.cols));
    for (std::size_t i = 0; i < l.size(); ++i) w[l.offset + i] = sd * normal(rng);
  }
  ToyNetwork net(spec, std::move(w));
  net.pretrained_ = net.weights_;
  return net;
}

namespace detail {

void check_input(const ToyNetwork& net, std::span<const double> x) {
  if (x.size() != net.input_dim())
    throw InvalidArgument("network: input has dimension " + std::to_string(x.size()) + ", expected " +
                          std::to_string(net.input_dim()));
}

Eigen::MatrixXd sample_layer_hessian(const ToyNetwork& net, const Sample& s, std::size_t layer) {
  check_input(net, s.x);
  const LayerShape& shape = net.layers().at(layer);
  const auto w = net.weights();
  const auto k = static_cast<Eigen::Index>(shape.size());
  ad::Tape tape;
  std::vector<ad::Var> params;
  params.reserve(w.size());
  for (double v : w) params.push_back(tape.variable(v));
  const ad::Var f = evaluate<ad::Var>(net.spec(), net.layers(), std::span<const ad::Var>(params), s.x);
  const ad::Var loss = 0.5 * ad::square(f - s.y);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(k, k);
  if (loss.idx < 0) return h;
  const std::vector<double> adj = tape.backward(loss);
  std::vector<double> tangent(tape.size(), 0.0);
  for (Eigen::Index j = 0; j < k; ++j) {
    std::fill(tangent.begin(), tangent.end(), 0.0);
    tangent[shape.offset + static_cast<std::size_t>(j)] = 1.0;
    const std::vector<double> col = tape.hessian_vector(loss, adj, tangent);
    for (Eigen::Index i = 0; i < k; ++i) h(i, j) = col[shape.offset + static_cast<std::size_t>(i)];
  }
  return 0.5 * (h + h.transpose());
}

}  // namespace detail

double forward(const ToyNetwork& net, std::span<const double> x) {
  detail::check_input(net, x);
  return detail::evaluate<double>(net.spec(), net.layers(), net.weights(), x);
}

namespace {

/// f(x) and its parameter gradient, reusing `tape`.
double value_and_gradient(const ToyNetwork& net, std::span<const double> x, ad::Tape& tape,
                          Eigen::Ref<Eigen::VectorXd> grad) {
  tape.clear();
  const auto w = net.weights();
  std::vector<ad::Var> params;
  params.reserve(w.size());
  for (double v : w) params.push_back(tape.variable(v));
  const ad::Var f = detail::evaluate<ad::Var>(net.spec(), net.layers(), std::span<const ad::Var>(params), x);
  const std::vector<double> adj = tape.backward(f);
  for (std::size_t i = 0; i < w.size(); ++i) grad[static_cast<Eigen::Index>(i)] = adj[i];
  return f.v;
}

Eigen::MatrixXd jacobian(const ToyNetwork& net, const Dataset& data, Eigen::VectorXd& f) {
  Eigen::MatrixXd J(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(net.param_count()));
  f.resize(static_cast<Eigen::Index>(data.size()));
  ad::Tape tape;
  Eigen::VectorXd g(static_cast<Eigen::Index>(net.param_count()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    f[r] = value_and_gradient(net, data[i].x, tape, g);
    J.row(r) = g.transpose();
  }
  return J;
}

}  // namespace

Eigen::VectorXd param_gradient(const ToyNetwork& net, std::span<const double> x) {
  detail::check_input(net, x);
  ad::Tape tape;
  Eigen::VectorXd g(static_cast<Eigen::Index>(net.param_count()));
  value_and_gradient(net, x, tape, g);
  return g;
}

Eigen::VectorXd outputs(const ToyNetwork& net, const Dataset& data) {
  Eigen::VectorXd f(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) f[static_cast<Eigen::Index>(i)] = forward(net, data[i].x);
  return f;
}

Eigen::VectorXd residuals(const ToyNetwork& net, const Dataset& data) {
  Eigen::VectorXd r = outputs(net, data);
  for (std::size_t i = 0; i < data.size(); ++i) r[static_cast<Eigen::Index>(i)] -= data[i].y;
  return r;
}

double mean_squared_error(const ToyNetwork& net, const Dataset& data) {
  if (data.empty()) throw InvalidArgument("mean_squared_error: empty dataset");
  return residuals(net, data).squaredNorm() / static_cast<double>(data.size());
}

TrainResult train_sgd(ToyNetwork net, const Dataset& data, double lr, std::size_t steps) {
  if (data.empty()) throw InvalidArgument("train_sgd: empty dataset");
  if (!(lr > 0.0)) throw InvalidArgument("train_sgd: learning rate must be positive");
  for (const auto& s : data) detail::check_input(net, s.x);

  const double n = static_cast<double>(data.size());
  LossTrace trace;
  trace.points.reserve(steps + 1);
  ad::Tape tape;
  const auto P = static_cast<Eigen::Index>(net.param_count());
  Eigen::VectorXd g(P), step_dir(P);
  for (std::size_t k = 0;; ++k) {
    step_dir.setZero();
    double sse = 0.0;
    for (const auto& s : data) {
      const double r = value_and_gradient(net, s.x, tape, g) - s.y;
      sse += r * r;
      step_dir += r * g;
    }
    const double mse = sse / n;
    trace.points.emplace_back(k, mse);
    if (!std::isfinite(mse) || mse > kDivergenceLoss)
      throw TrainingDiverged("train_sgd: diverged at step " + std::to_string(k), std::move(trace));
    if (k == steps) break;
    auto w = net.weights();
    for (Eigen::Index i = 0; i < P; ++i) w[static_cast<std::size_t>(i)] -= lr / n * step_dir[i];
  }
  return {std::move(net), std::move(trace)};
}

std::optional<ToyNetwork> fit_to_tolerance(ToyNetwork net, const Dataset& data, double tolerance,
                                           std::size_t max_iters) {
  if (data.empty()) throw InvalidArgument("fit_to_tolerance: empty dataset");
  const double n = static_cast<double>(data.size());
  Eigen::VectorXd f;
  double damping = 1e-3;
  Eigen::MatrixXd J = jacobian(net, data, f);
  Eigen::VectorXd y(f.size());
  for (std::size_t i = 0; i < data.size(); ++i) y[static_cast<Eigen::Index>(i)] = data[i].y;
  double mse = (f - y).squaredNorm() / n;
  for (std::size_t it = 0; it < max_iters && mse >= tolerance; ++it) {
    const Eigen::VectorXd r = f - y;
    // Solve in the (n x n) dual form; works for over- and under-parameterized nets.
    Eigen::VectorXd delta;
    const Eigen::Index P = J.cols();
    if (J.rows() <= P) {
      Eigen::MatrixXd K = J * J.transpose();
      K.diagonal().array() += damping;
      delta = J.transpose() * K.ldlt().solve(r);
    } else {
      Eigen::MatrixXd A = J.transpose() * J;
      A.diagonal().array() += damping;
      delta = A.ldlt().solve(J.transpose() * r);
    }
    ToyNetwork trial = net;
    auto w = trial.weights();
    for (Eigen::Index i = 0; i < P; ++i) w[static_cast<std::size_t>(i)] -= delta[i];
    Eigen::VectorXd f_trial;
    Eigen::MatrixXd J_trial = jacobian(trial, data, f_trial);
    const double mse_trial = (f_trial - y).squaredNorm() / n;
    if (std::isfinite(mse_trial) && mse_trial < mse) {
      net = std::move(trial);
      J = std::move(J_trial);
      f = std::move(f_trial);
      mse = mse_trial;
      damping = std::max(damping * 0.3, 1e-15);
    } else {
      damping *= 10.0;
      if (damping > 1e12) break;
    }
  }
  if (mse >= tolerance) return std::nullopt;
  return net;
}

std::vector<Eigen::MatrixXd> layer_inputs(const ToyNetwork& net, const Dataset& data) {
  std::vector<std::vector<std::vector<double>>> seen(net.layers().size());
  detail::ForwardProbe probe;
  probe.layer_inputs = &seen;
  for (const auto& s : data) {
    detail::check_input(net, s.x);
    detail::evaluate<double>(net.spec(), net.layers(), net.weights(), s.x, &probe);
  }
  std::vector<Eigen::MatrixXd> out;
  for (std::size_t l = 0; l < seen.size(); ++l) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(seen[l].size()), static_cast<Eigen::Index>(net.layers()[l].cols));
    for (std::size_t r = 0; r < seen[l].size(); ++r)
      for (std::size_t c = 0; c < seen[l][r].size(); ++c)
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = seen[l][r][c];
    out.push_back(std::move(m));
  }
  return out;
}

DiagnosticsReport assumption_diagnostics(const ToyNetwork& net, const Dataset& data) {
  if (data.empty()) throw InvalidArgument("assumption_diagnostics: empty dataset");
  DiagnosticsReport rep;
  rep.min_gradient_norm = std::numeric_limits<double>::infinity();
  detail::ForwardProbe probe;
  const bool attention = net.spec().architecture == Architecture::ToyAttention;
  for (const auto& s : data) {
    detail::check_input(net, s.x);
    const double f = detail::evaluate<double>(net.spec(), net.layers(), net.weights(), s.x, &probe);
    rep.max_abs_loss = std::max(rep.max_abs_loss, 0.5 * (f - s.y) * (f - s.y));
    double xn = 0.0;
    for (double v : s.x) xn += v * v;
    rep.max_input_norm = std::max(rep.max_input_norm, std::sqrt(xn));
    rep.min_gradient_norm = std::min(rep.min_gradient_norm, param_gradient(net, s.x).norm());
  }
  if (attention) {
    rep.layer_norm_scale_ratio = probe.layer_norm_scale_ratio;
    rep.max_softmax_row_norm = probe.max_softmax_row_norm;
  }
  return rep;
}

const char* to_string(Architecture a) {
  switch (a) {
    case Architecture::Linear: return "linear";
    case Architecture::MLP: return "mlp";
    case Architecture::ToyAttention: return "attention";
  }
  return "?";
}

const char* to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::SmoothReLU: return "smooth_relu";
    case Activation::ReLU: return "relu";
  }
  return "?";
}

Architecture architecture_from_string(const std::string& s) {
  if (s == "linear") return Architecture::Linear;
  if (s == "mlp") return Architecture::MLP;
  if (s == "attention") return Architecture::ToyAttention;
  throw InvalidArgument("unknown architecture '" + s + "'");
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "smooth_relu") return Activation::SmoothReLU;
  if (s == "relu") return Activation::ReLU;
  throw InvalidArgument("unknown activation '" + s + "'");
}

}  // namespace lens
