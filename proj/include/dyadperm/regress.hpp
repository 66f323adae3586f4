#pragma once

#include <Eigen/Dense>
#include <vector>

#include "dyadperm/dyad_matrix.hpp"
#include "dyadperm/ustat.hpp"

namespace dyadperm {

// Outcome A regressed on p focal networks B_1..B_p and q nuisance networks
// C_1..C_q (focal first in every stacked object below).
struct DyadDesign {
  DyadMatrix outcome;
  std::vector<DyadMatrix> focal;
  std::vector<DyadMatrix> nuisance;

  int n() const { return outcome.n(); }
  int p() const { return static_cast<int>(focal.size()); }
  int q() const { return static_cast<int>(nuisance.size()); }
};

// Validates shared size and p >= 1.
DyadDesign make_dyad_design(DyadMatrix outcome, std::vector<DyadMatrix> focal,
                            std::vector<DyadMatrix> nuisance = {});

// Least-squares fit over the n(n-1) vectorized off-diagonal dyads:
//   coef       solves sigma_hat * coef = cov(x, a) (normal equations)
//   residuals  e_ij = a_ij - abar - (x_ij - xbar)' coef, zero diagonal
//   sigma_hat  {n(n-1)}^-1 sum_{i!=j} (x_ij - xbar)(x_ij - xbar)'
//   h1_phi_hat factor * sum_i phi1_i phi1_i' with
//              phi1_i = (n-1)^-1 sum_{j!=i} e_ij (x_ij - xbar)
//   v_hat      4 sigma_hat^-1 h1_phi_hat sigma_hat^-1
// The factor mirrors ustat's eta1 correction (1/n plain, Sen corrected).
struct DyadFit {
  int n = 0, p = 0, q = 0;
  Eta1Correction correction = Eta1Correction::Plain;
  double intercept = 0.0;
  Eigen::VectorXd coef;
  std::vector<double> residuals;
  Eigen::MatrixXd sigma_hat;
  Eigen::MatrixXd h1_phi_hat;
  Eigen::MatrixXd v_hat;

  // F = [I_p; 0], the focal-block selector.
  Eigen::MatrixXd selection() const;
};

DyadFit fit_dyadic_ols(const DyadDesign& d,
                       Eta1Correction correction = Eta1Correction::Auto);

// Liang-Zeger sandwich over the n column-clusters of the diagonal-filled
// matrices (diagonals set to the off-diagonal means). Returns the full
// (p+q+1)x(p+q+1) matrix with the intercept first. Under the Sen convention
// the slope block satisfies v_hat = 4 n^2 (n-1) / {(n-2)(n-4)} * slope block
// exactly.
Eigen::MatrixXd cluster_robust_variance(const DyadDesign& d, const DyadFit& f);

enum class WaldScope { AllCoefficients, FocalBlock };

// W = n w' (V)^-1 w over all coefficients, or the focal block only:
// W = n (F'w)' (F' v_hat F)^-1 (F'w). Null reference law chi^2 with p (or
// p+q) degrees of freedom.
double wald_statistic(const DyadFit& f, WaldScope scope);

// OLS residual matrices of each target on an intercept plus the controls.
// Empty controls reduce to centering. Outputs are symmetric with zero
// diagonals, ready for permutation strategies.
std::vector<DyadMatrix> residualize(const std::vector<DyadMatrix>& targets,
                                    const std::vector<DyadMatrix>& controls);

}  // namespace dyadperm
