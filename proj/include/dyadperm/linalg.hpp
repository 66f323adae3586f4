#pragma once

#include <Eigen/Dense>

#include "dyadperm/error.hpp"

namespace dyadperm {

// Inverse of a symmetric positive definite matrix through its
// eigendecomposition, rejecting eigenvalue ratios beyond 1e12.
inline Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, ErrorCode code,
                                   const std::string& label) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success)
    fail(code, label + ": eigendecomposition failed");
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double lmax = lam.cwiseAbs().maxCoeff();
  if (!(lmax > 0.0) || lam.minCoeff() <= lmax * 1e-12)
    fail(code, label + ": singular or condition number beyond 1e12");
  Eigen::MatrixXd inv = es.eigenvectors() * lam.cwiseInverse().asDiagonal() *
                        es.eigenvectors().transpose();
  return 0.5 * (inv + inv.transpose());
}

// x' pinv(m) x for symmetric positive semi-definite m, with eigenvalues at or
// below lmax * 1e-15 dropped. Always finite, so permutation replicates with an
// exactly degenerate variance produce a value instead of an error.
inline double psd_quadratic_inverse_form(const Eigen::MatrixXd& m,
                                         const Eigen::VectorXd& x) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double lmax = lam.cwiseAbs().maxCoeff();
  if (!(lmax > 0.0)) return 0.0;
  const Eigen::VectorXd proj = es.eigenvectors().transpose() * x;
  double out = 0.0;
  for (Eigen::Index r = 0; r < lam.size(); ++r) {
    if (lam(r) > lmax * 1e-15) out += proj(r) * proj(r) / lam(r);
  }
  return out;
}

}  // namespace dyadperm
