#pragma once

// Forward pass written once over the scalar type (double, ad::Var, ad::Jet2).

#include "lens/autodiff.hpp"
#include "lens/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <type_traits>
#include <vector>

namespace lens::detail {

/// Intermediate quantities recorded on plain double evaluations.
struct ForwardProbe {
  double layer_norm_scale_ratio = 1.0;  // worst |rms - 1| + 1 over tokens
  double max_softmax_row_norm = 0.0;
  /// When non-null, receives every vector each layer multiplies, per layer.
  std::vector<std::vector<std::vector<double>>>* layer_inputs = nullptr;
};

inline constexpr double kLayerNormEps = 1e-12;

template <class S>
S activate(const S& z, Activation act) {
  switch (act) {
    case Activation::Tanh:
      return ad::tanh(z);
    case Activation::SmoothReLU:
      return ad::softplus(z, kSmoothReluSharpness);
    case Activation::ReLU:
      return ad::relu(z);
  }
  return z;
}

template <class S, class In>
void record_input(ForwardProbe* probe, std::size_t layer, const std::vector<In>& in) {
  if constexpr (std::is_same_v<S, double>) {
    if (probe && probe->layer_inputs) {
      std::vector<double> v(in.size());
      for (std::size_t i = 0; i < in.size(); ++i) v[i] = ad::value(in[i]);
      (*probe->layer_inputs)[layer].push_back(std::move(v));
    }
  }
}

/// out = W in, W taken from params at `shape`.
template <class S, class In>
std::vector<S> matvec(std::span<const S> params, const LayerShape& shape, const std::vector<In>& in) {
  std::vector<S> out(shape.rows);
  for (std::size_t r = 0; r < shape.rows; ++r) {
    S acc(0.0);
    const std::size_t row = shape.offset + r * shape.cols;
    for (std::size_t c = 0; c < shape.cols; ++c) acc += params[row + c] * in[c];
    out[r] = acc;
  }
  return out;
}

template <class S>
S evaluate_mlp(const NetworkSpec& spec, const std::vector<LayerShape>& layers,
               std::span<const S> params, std::span<const double> x, ForwardProbe* probe) {
  std::vector<double> in(x.begin(), x.end());
  record_input<S>(probe, 0, in);
  std::vector<S> h = matvec<S>(params, layers[0], in);
  for (std::size_t l = 1; l < layers.size(); ++l) {
    for (auto& v : h) v = activate(v, spec.activation);
    record_input<S>(probe, l, h);
    h = matvec<S>(params, layers[l], h);
  }
  return h[0];
}

template <class S>
S evaluate_attention(const NetworkSpec& spec, const std::vector<LayerShape>& layers,
                     std::span<const S> params, std::span<const double> x, ForwardProbe* probe) {
  const std::size_t T = spec.layer_dims[0];
  const std::size_t d = spec.layer_dims[1];
  const LayerShape& wq = layers[0];
  const LayerShape& wk = layers[1];
  const LayerShape& wv = layers[2];
  const LayerShape& w1 = layers[3];
  const LayerShape& w2 = layers[4];
  const LayerShape& wo = layers[5];

  std::vector<std::vector<double>> tokens(T);
  for (std::size_t t = 0; t < T; ++t) tokens[t].assign(x.begin() + t * d, x.begin() + (t + 1) * d);

  std::vector<std::vector<S>> q(T), k(T), v(T);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t l = 0; l < 3; ++l) record_input<S>(probe, l, tokens[t]);
    q[t] = matvec<S>(params, wq, tokens[t]);
    k[t] = matvec<S>(params, wk, tokens[t]);
    v[t] = matvec<S>(params, wv, tokens[t]);
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<S> pooled(d, S(0.0));
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<S> scores(T);
    double max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t u = 0; u < T; ++u) {
      S s(0.0);
      for (std::size_t c = 0; c < d; ++c) s += q[t][c] * k[u][c];
      scores[u] = s * scale;
      max_score = std::max(max_score, ad::value(scores[u]));
    }
    S denom(0.0);
    for (auto& s : scores) {
      s = ad::exp(s - max_score);
      denom += s;
    }
    double row_norm = 0.0;
    std::vector<S> h(d);
    for (std::size_t c = 0; c < d; ++c) h[c] = S(tokens[t][c]);
    for (std::size_t u = 0; u < T; ++u) {
      const S p = scores[u] / denom;
      row_norm += std::abs(ad::value(p));
      for (std::size_t c = 0; c < d; ++c) h[c] += p * v[u][c];
    }

    // Layer norm without affine parameters.
    S mean(0.0);
    for (const auto& e : h) mean += e;
    mean = mean / static_cast<double>(d);
    S var(0.0);
    for (auto& e : h) {
      e = e - mean;
      var += ad::square(e);
    }
    var = var / static_cast<double>(d);
    const S inv_std = 1.0 / ad::sqrt(var + kLayerNormEps);
    double rms = 0.0;
    for (auto& e : h) {
      e = e * inv_std;
      rms += ad::value(e) * ad::value(e);
    }
    rms = std::sqrt(rms / static_cast<double>(d));

    record_input<S>(probe, 3, h);
    std::vector<S> hidden = matvec<S>(params, w1, h);
    for (auto& e : hidden) e = activate(e, spec.activation);
    record_input<S>(probe, 4, hidden);
    const std::vector<S> ff = matvec<S>(params, w2, hidden);
    for (std::size_t c = 0; c < d; ++c) pooled[c] += h[c] + ff[c];

    if constexpr (std::is_same_v<S, double>) {
      if (probe) {
        const double dev = std::abs(rms - 1.0);
        if (dev > std::abs(probe->layer_norm_scale_ratio - 1.0)) probe->layer_norm_scale_ratio = rms;
        probe->max_softmax_row_norm = std::max(probe->max_softmax_row_norm, row_norm);
      }
    }
  }
  for (auto& e : pooled) e = e / static_cast<double>(T);
  record_input<S>(probe, 5, pooled);
  return matvec<S>(params, wo, pooled)[0];
}

template <class S>
S evaluate(const NetworkSpec& spec, const std::vector<LayerShape>& layers, std::span<const S> params,
           std::span<const double> x, ForwardProbe* probe = nullptr) {
  if (spec.architecture == Architecture::ToyAttention)
    return evaluate_attention<S>(spec, layers, params, x, probe);
  return evaluate_mlp<S>(spec, layers, params, x, probe);
}

void check_input(const ToyNetwork& net, std::span<const double> x);

/// Hessian of the per-sample loss 1/2 (f(x) - y)^2 with respect to one layer.
Eigen::MatrixXd sample_layer_hessian(const ToyNetwork& net, const Sample& s, std::size_t layer);

}  // namespace lens::detail
