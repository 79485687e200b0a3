#pragma once

#include "lens/network.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

namespace lens::test {

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(n);
  for (auto& e : v) e = nd(rng);
  return v;
}

inline Dataset random_dataset(std::mt19937_64& rng, std::size_t n, std::size_t dim, double label_scale = 1.0) {
  Dataset d(n);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto& s : d) {
    s.x = random_vector(rng, dim);
    s.y = label_scale * nd(rng);
  }
  return d;
}

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Random symmetric PSD matrix G G^T / k.
inline Eigen::MatrixXd random_psd(std::mt19937_64& rng, Eigen::Index n, Eigen::Index rank) {
  Eigen::MatrixXd G(n, rank);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = nd(rng);
  return G * G.transpose() / static_cast<double>(rank);
}

/// Dense matrix exponential by scaling and squaring of a Taylor series.
inline Eigen::MatrixXd expm_dense(const Eigen::MatrixXd& A) {
  const double norm = A.cwiseAbs().rowwise().sum().maxCoeff();
  int s = 0;
  while (norm / std::pow(2.0, s) > 0.1) ++s;
  const Eigen::MatrixXd X = A / std::pow(2.0, s);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(A.rows(), A.cols());
  Eigen::MatrixXd sum = term;
  for (int k = 1; k <= 20; ++k) {
    term = term * X / static_cast<double>(k);
    sum += term;
  }
  for (int i = 0; i < s; ++i) sum = sum * sum;
  return sum;
}

}  // namespace lens::test
