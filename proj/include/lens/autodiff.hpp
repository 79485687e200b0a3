#pragma once

// Minimal automatic differentiation for the toy networks.
//
//   Var   reverse mode on an explicit tape; one backward sweep gives the full
//         parameter gradient of a scalar output, and a tangent-seeded sweep
//         pair gives a Hessian-vector product.
//   Jet2  forward mode carrying value, gradient and dense Hessian over a small
//         set of active variables (one layer at a time).
//
// Both expose the same free-function surface as double (`unary`, `value`),
// so network code is written once as a template over the scalar type.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace lens::ad {

inline double value(double x) { return x; }

/// f(a) given f(a), f'(a), f''(a) evaluated at value(a).
inline double unary(double, double f, double, double) { return f; }

// ---------------------------------------------------------------------------
// Reverse mode

class Tape;

struct Var {
  double v = 0.0;
  int idx = -1;  // -1: constant, not recorded
  Tape* tape = nullptr;

  Var() = default;
  Var(double value) : v(value) {}  // NOLINT: implicit constant promotion
  Var(double value, int index, Tape* owner) : v(value), idx(index), tape(owner) {}
};

class Tape {
 public:
  /// First partials da, db and second partials haa, hab, hbb of a node with
  /// respect to its operands.
  struct Node {
    int a, b;
    double da, db;
    double haa, hab, hbb;
  };

  Var variable(double v) {
    nodes_.push_back({-1, -1, 0.0, 0.0, 0.0, 0.0, 0.0});
    return {v, static_cast<int>(nodes_.size()) - 1, this};
  }

  Var record(double v, int a, double da, int b = -1, double db = 0.0, double haa = 0.0, double hab = 0.0,
             double hbb = 0.0) {
    if (a < 0 && b < 0) return {v, -1, nullptr};
    if (a < 0) {
      nodes_.push_back({b, -1, db, 0.0, hbb, 0.0, 0.0});
    } else if (b < 0) {
      nodes_.push_back({a, -1, da, 0.0, haa, 0.0, 0.0});
    } else {
      nodes_.push_back({a, b, da, db, haa, hab, hbb});
    }
    return {v, static_cast<int>(nodes_.size()) - 1, this};
  }

  /// Adjoints of every node with respect to `out`; leaves created first
  /// occupy the leading entries.
  std::vector<double> backward(const Var& out) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    if (out.idx < 0) return adj;
    adj[out.idx] = 1.0;
    for (int i = out.idx; i >= 0; --i) {
      const double g = adj[i];
      if (g == 0.0) continue;
      const Node& n = nodes_[i];
      if (n.a >= 0) adj[n.a] += g * n.da;
      if (n.b >= 0) adj[n.b] += g * n.db;
    }
    return adj;
  }

  /// Hessian-vector product by forward-over-reverse. `adj` comes from
  /// backward(out); `tangent` holds the direction on the leaves (other entries
  /// are overwritten). Returns d(adj)/d(direction) for every node.
  std::vector<double> hessian_vector(const Var& out, const std::vector<double>& adj,
                                     std::vector<double>& tangent) const {
    const auto n = static_cast<int>(nodes_.size());
    for (int i = 0; i < n; ++i) {
      const Node& nd = nodes_[i];
      if (nd.a < 0) continue;
      tangent[i] = nd.da * tangent[nd.a] + (nd.b >= 0 ? nd.db * tangent[nd.b] : 0.0);
    }
    std::vector<double> adj2(nodes_.size(), 0.0);
    if (out.idx < 0) return adj2;
    for (int i = out.idx; i >= 0; --i) {
      const Node& nd = nodes_[i];
      if (nd.a < 0) continue;
      const double g = adj[i], g2 = adj2[i];
      const double ta = tangent[nd.a], tb = nd.b >= 0 ? tangent[nd.b] : 0.0;
      adj2[nd.a] += g2 * nd.da + g * (nd.haa * ta + nd.hab * tb);
      if (nd.b >= 0) adj2[nd.b] += g2 * nd.db + g * (nd.hab * ta + nd.hbb * tb);
    }
    return adj2;
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

inline double value(const Var& x) { return x.v; }

inline Tape* tape_of(const Var& a, const Var& b) { return a.tape ? a.tape : b.tape; }

inline Var unary(const Var& a, double f, double df, double d2f) {
  if (a.idx < 0) return {f, -1, nullptr};
  return a.tape->record(f, a.idx, df, -1, 0.0, d2f);
}

inline Var operator+(const Var& a, const Var& b) {
  Tape* t = tape_of(a, b);
  if (!t) return {a.v + b.v, -1, nullptr};
  return t->record(a.v + b.v, a.idx, 1.0, b.idx, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
  Tape* t = tape_of(a, b);
  if (!t) return {a.v - b.v, -1, nullptr};
  return t->record(a.v - b.v, a.idx, 1.0, b.idx, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
  Tape* t = tape_of(a, b);
  if (!t) return {a.v * b.v, -1, nullptr};
  return t->record(a.v * b.v, a.idx, b.v, b.idx, a.v, 0.0, 1.0, 0.0);
}
inline Var operator-(const Var& a) { return unary(a, -a.v, -1.0, 0.0); }
inline Var operator+(const Var& a, double c) { return unary(a, a.v + c, 1.0, 0.0); }
inline Var operator+(double c, const Var& a) { return a + c; }
inline Var operator-(const Var& a, double c) { return unary(a, a.v - c, 1.0, 0.0); }
inline Var operator-(double c, const Var& a) { return unary(a, c - a.v, -1.0, 0.0); }
inline Var operator*(const Var& a, double c) { return unary(a, a.v * c, c, 0.0); }
inline Var operator*(double c, const Var& a) { return a * c; }
inline Var operator/(const Var& a, double c) { return a * (1.0 / c); }
inline Var operator/(const Var& a, const Var& b) {
  Tape* t = tape_of(a, b);
  if (!t) return {a.v / b.v, -1, nullptr};
  const double q = a.v / b.v;
  const double inv = 1.0 / b.v;
  return t->record(q, a.idx, inv, b.idx, -q * inv, 0.0, -inv * inv, 2.0 * q * inv * inv);
}
inline Var operator/(double c, const Var& b) {
  const double q = c / b.v;
  return unary(b, q, -q / b.v, 2.0 * q / (b.v * b.v));
}
inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }

// ---------------------------------------------------------------------------
// Forward second order

struct Jet2 {
  double v = 0.0;
  Eigen::VectorXd g;  // empty: constant
  Eigen::MatrixXd h;

  Jet2() = default;
  Jet2(double value) : v(value) {}  // NOLINT: implicit constant promotion

  static Jet2 variable(double value, Eigen::Index index, Eigen::Index n) {
    Jet2 j(value);
    j.g = Eigen::VectorXd::Zero(n);
    j.g[index] = 1.0;
    j.h = Eigen::MatrixXd::Zero(n, n);
    return j;
  }

  bool constant() const { return g.size() == 0; }
};

inline double value(const Jet2& x) { return x.v; }

inline Jet2 unary(const Jet2& a, double f, double df, double d2f) {
  Jet2 r(f);
  if (a.constant()) return r;
  r.g = df * a.g;
  r.h = df * a.h;
  if (d2f != 0.0) r.h.noalias() += d2f * a.g * a.g.transpose();
  return r;
}

inline Jet2 operator+(const Jet2& a, const Jet2& b) {
  if (a.constant()) return unary(b, a.v + b.v, 1.0, 0.0);
  if (b.constant()) return unary(a, a.v + b.v, 1.0, 0.0);
  Jet2 r(a.v + b.v);
  r.g = a.g + b.g;
  r.h = a.h + b.h;
  return r;
}
inline Jet2 operator-(const Jet2& a) { return unary(a, -a.v, -1.0, 0.0); }
inline Jet2 operator-(const Jet2& a, const Jet2& b) { return a + (-b); }
inline Jet2 operator*(const Jet2& a, const Jet2& b) {
  if (a.constant()) return unary(b, a.v * b.v, a.v, 0.0);
  if (b.constant()) return unary(a, a.v * b.v, b.v, 0.0);
  Jet2 r(a.v * b.v);
  r.g = a.v * b.g + b.v * a.g;
  r.h = a.v * b.h + b.v * a.h;
  r.h.noalias() += a.g * b.g.transpose();
  r.h.noalias() += b.g * a.g.transpose();
  return r;
}
inline Jet2 operator+(const Jet2& a, double c) { return unary(a, a.v + c, 1.0, 0.0); }
inline Jet2 operator+(double c, const Jet2& a) { return a + c; }
inline Jet2 operator-(const Jet2& a, double c) { return unary(a, a.v - c, 1.0, 0.0); }
inline Jet2 operator-(double c, const Jet2& a) { return unary(a, c - a.v, -1.0, 0.0); }
inline Jet2 operator*(const Jet2& a, double c) { return unary(a, a.v * c, c, 0.0); }
inline Jet2 operator*(double c, const Jet2& a) { return a * c; }
inline Jet2 operator/(const Jet2& a, double c) { return a * (1.0 / c); }
inline Jet2 operator/(double c, const Jet2& b) {
  const double q = c / b.v;
  return unary(b, q, -q / b.v, 2.0 * q / (b.v * b.v));
}
inline Jet2 operator/(const Jet2& a, const Jet2& b) { return a * (1.0 / b); }
inline Jet2& operator+=(Jet2& a, const Jet2& b) { return a = a + b; }

// ---------------------------------------------------------------------------
// Elementary functions, generic over double / Var / Jet2.

template <class S>
S exp(const S& a) {
  const double e = std::exp(value(a));
  return unary(a, e, e, e);
}

template <class S>
S log(const S& a) {
  const double x = value(a);
  return unary(a, std::log(x), 1.0 / x, -1.0 / (x * x));
}

template <class S>
S sqrt(const S& a) {
  const double s = std::sqrt(value(a));
  return unary(a, s, 0.5 / s, -0.25 / (s * value(a)));
}

template <class S>
S tanh(const S& a) {
  const double t = std::tanh(value(a));
  const double d = 1.0 - t * t;
  return unary(a, t, d, -2.0 * t * d);
}

template <class S>
S square(const S& a) {
  const double x = value(a);
  return unary(a, x * x, 2.0 * x, 2.0);
}

/// log(1 + exp(k x)) / k, twice differentiable stand-in for ReLU.
template <class S>
S softplus(const S& a, double sharpness) {
  const double z = sharpness * value(a);
  const double f = (z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z))) / sharpness;
  const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return unary(a, f, sig, sharpness * sig * (1.0 - sig));
}

/// max(0, x). Second derivative reported as zero (undefined at the kink).
template <class S>
S relu(const S& a) {
  const double x = value(a);
  return x > 0 ? unary(a, x, 1.0, 0.0) : unary(a, 0.0, 0.0, 0.0);
}

}  // namespace lens::ad
