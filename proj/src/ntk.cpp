#include "lens/ntk.hpp"

#include <cmath>
#include <string>

namespace lens {

KernelMatrix KernelMatrix::from_entries(Eigen::MatrixXd entries) {
  if (entries.rows() != entries.cols() || entries.rows() == 0)
    throw InvalidArgument("kernel: matrix must be square and nonempty");
  if (!entries.allFinite()) throw NumericalError("kernel: non-finite entries");
  const double asym = (entries - entries.transpose()).cwiseAbs().maxCoeff();
  if (asym > kKernelSymmetryTol)
    throw NumericalError("kernel: not symmetric (max asymmetry " + std::to_string(asym) + ")");

  KernelMatrix k;
  k.entries_ = 0.5 * (entries + entries.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k.entries_);
  if (eig.info() != Eigen::Success) throw NumericalError("kernel: eigendecomposition failed");
  k.eigenvalues_ = eig.eigenvalues();
  for (Eigen::Index i = 0; i < k.eigenvalues_.size(); ++i) {
    double& lambda = k.eigenvalues_[i];
    if (lambda < -kKernelNegativeEigenTol)
      throw NumericalError("kernel: eigenvalue " + std::to_string(lambda) + " is not PSD");
    if (lambda < 0.0) lambda = 0.0;
  }
  k.eigenvectors_ = eig.eigenvectors();
  return k;
}

KernelMatrix compute_ntk(const ToyNetwork& net, const std::vector<std::vector<double>>& inputs) {
  if (inputs.empty()) throw InvalidArgument("compute_ntk: no inputs");
  const auto n = static_cast<Eigen::Index>(inputs.size());
  Eigen::MatrixXd G(n, static_cast<Eigen::Index>(net.param_count()));
  for (Eigen::Index i = 0; i < n; ++i) G.row(i) = param_gradient(net, inputs[static_cast<std::size_t>(i)]);
  Eigen::MatrixXd theta(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) theta(i, j) = theta(j, i) = G.row(i).dot(G.row(j));
  return KernelMatrix::from_entries(std::move(theta));
}

KernelMatrix compute_ntk(const ToyNetwork& net, const Dataset& data) {
  std::vector<std::vector<double>> xs;
  xs.reserve(data.size());
  for (const auto& s : data) xs.push_back(s.x);
  return compute_ntk(net, xs);
}

namespace {

void check_flow_args(const KernelMatrix& kernel, const Eigen::VectorXd& r0, double eta, double t) {
  if (r0.size() != kernel.dim())
    throw InvalidArgument("kernel flow: residual length " + std::to_string(r0.size()) +
                          " does not match kernel dimension " + std::to_string(kernel.dim()));
  if (!(eta > 0.0) || !std::isfinite(eta)) throw InvalidArgument("kernel flow: eta must be positive");
  if (!(t >= 0.0)) throw InvalidArgument("kernel flow: t must be nonnegative");
}

}  // namespace

double ntk_test_loss(const KernelMatrix& kernel, const Eigen::VectorXd& r0, double eta, double t) {
  check_flow_args(kernel, r0, eta, t);
  const Eigen::VectorXd proj = kernel.eigenvectors().transpose() * r0;
  double F = 0.0;
  for (Eigen::Index k = 0; k < proj.size(); ++k)
    F += std::exp(-2.0 * eta * kernel.eigenvalues()[k] * t) * proj[k] * proj[k];
  return F;
}

Eigen::VectorXd linearized_residual(const KernelMatrix& kernel, const Eigen::VectorXd& r0, double eta,
                                    double t) {
  check_flow_args(kernel, r0, eta, t);
  const Eigen::VectorXd decay = (-eta * t * kernel.eigenvalues().array()).exp().matrix();
  return kernel.eigenvectors() * decay.cwiseProduct(kernel.eigenvectors().transpose() * r0);
}

}  // namespace lens
