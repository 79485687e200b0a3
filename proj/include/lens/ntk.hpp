#pragma once

#include "lens/network.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace lens {

/// Symmetric PSD kernel with its eigendecomposition. Immutable once built.
class KernelMatrix {
 public:
  /// Eigenvalues in [-1e-8, 0) are clipped to 0; anything more negative, or
  /// an asymmetric input, raises NumericalError.
  static KernelMatrix from_entries(Eigen::MatrixXd entries);

  const Eigen::MatrixXd& entries() const { return entries_; }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  const Eigen::MatrixXd& eigenvectors() const { return eigenvectors_; }
  Eigen::Index dim() const { return entries_.rows(); }

 private:
  KernelMatrix() = default;
  Eigen::MatrixXd entries_;
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd eigenvectors_;
};

inline constexpr double kKernelSymmetryTol = 1e-10;
inline constexpr double kKernelNegativeEigenTol = 1e-8;

/// Theta(x_i, x_j) = grad_theta f(x_i) . grad_theta f(x_j).
KernelMatrix compute_ntk(const ToyNetwork& net, const std::vector<std::vector<double>>& inputs);
KernelMatrix compute_ntk(const ToyNetwork& net, const Dataset& data);

/// F(Theta, t) = || exp(-eta Theta t) r0 ||^2.
double ntk_test_loss(const KernelMatrix& kernel, const Eigen::VectorXd& r0, double eta, double t);

/// exp(-eta Theta t) r0.
Eigen::VectorXd linearized_residual(const KernelMatrix& kernel, const Eigen::VectorXd& r0, double eta,
                                    double t);

}  // namespace lens
