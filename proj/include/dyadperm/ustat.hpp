#pragma once

#include "dyadperm/dyad_matrix.hpp"

namespace dyadperm {

// Outer normalizer of the first-order projection variance estimate. Plain is
// the 1/n factor; Sen is the finite-sample correction (n-1)/{(n-2)(n-4)},
// which is unbiased up to an eta2/(n-4) remainder and is the convention under
// which the cluster-robust identity in regress is exact. Auto resolves to Sen
// for n >= 8 and Plain below.
enum class Eta1Correction { Auto, Sen, Plain };

Eta1Correction resolve_eta1_correction(Eta1Correction c, int n);
double eta1_outer_factor(Eta1Correction resolved, int n);

// Point estimates and variance components for a pair of dyadic matrices:
//   phi0_hat       {n(n-1)-1}^-1 sum_{i!=j} (a_ij - abar)(b_ij - bbar)
//   eta2_alpha_hat {n(n-1)-1}^-1 sum_{i!=j} (a_ij - abar)^2   (beta analogous)
//   eta1_phi_hat   factor * sum_i {(n-1)^-1 sum_{j!=i} (a_ij-abar)(b_ij-bbar)}^2
//   rho_hat        phi0_hat / sqrt(eta2_alpha_hat * eta2_beta_hat)
//   v_hat          4 * eta1_phi_hat / (eta2_alpha_hat * eta2_beta_hat)
struct UStatEstimates {
  int n = 0;
  Eta1Correction correction = Eta1Correction::Plain;  // resolved, never Auto
  double phi0_hat = 0.0;
  double eta2_alpha_hat = 0.0;
  double eta2_beta_hat = 0.0;
  double eta1_phi_hat = 0.0;
  double rho_hat = 0.0;
  double v_hat = 0.0;
};

UStatEstimates qap_estimates(const DyadMatrix& a, const DyadMatrix& b,
                             Eta1Correction correction = Eta1Correction::Auto);

// sqrt(n) * rho_hat; null law N(0, v_w).
double unstudentized_statistic(const UStatEstimates& e);

// sqrt(n) * rho_hat / sqrt(v_hat); null law N(0, 1).
double studentized_statistic(const UStatEstimates& e);

}  // namespace dyadperm
