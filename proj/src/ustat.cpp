#include "dyadperm/ustat.hpp"

#include <cmath>
#include <string>

#include "dyadperm/summation.hpp"

namespace dyadperm {

Eta1Correction resolve_eta1_correction(Eta1Correction c, int n) {
  if (c == Eta1Correction::Auto) {
    return n >= 8 ? Eta1Correction::Sen : Eta1Correction::Plain;
  }
  if (c == Eta1Correction::Sen && n <= 4) {
    fail(ErrorCode::TooSmall,
         "Sen eta1 correction needs n >= 5, got n = " + std::to_string(n));
  }
  return c;
}

double eta1_outer_factor(Eta1Correction resolved, int n) {
  if (resolved == Eta1Correction::Sen) {
    return static_cast<double>(n - 1) /
           (static_cast<double>(n - 2) * static_cast<double>(n - 4));
  }
  return 1.0 / static_cast<double>(n);
}

namespace {

double max_abs_entry(const DyadMatrix& m) {
  double v = 0.0;
  for (double x : m.values()) v = std::max(v, std::abs(x));
  return v;
}

}  // namespace

UStatEstimates qap_estimates(const DyadMatrix& a, const DyadMatrix& b,
                             Eta1Correction correction) {
  const int n = a.n();
  if (b.n() != n) {
    fail(ErrorCode::DimensionMismatch,
         "matrices have n = " + std::to_string(n) + " and " +
             std::to_string(b.n()));
  }

  UStatEstimates e;
  e.n = n;
  e.correction = resolve_eta1_correction(correction, n);

  const auto nu = static_cast<std::size_t>(n);
  const double abar = off_diagonal_mean(a);
  const double bbar = off_diagonal_mean(b);
  const double* av = a.data();
  const double* bv = b.data();

  // Row sums of centered cross products and squares; the diagonal contributes
  // (0 - abar)(0 - bbar) garbage, so it is skipped explicitly here.
  std::vector<double> cross_row(nu), aa_row(nu), bb_row(nu);
  for (std::size_t i = 0; i < nu; ++i) {
    cross_row[i] = pairwise_sum(nu, [&](std::size_t j) {
      if (j == i) return 0.0;
      return (av[i * nu + j] - abar) * (bv[i * nu + j] - bbar);
    });
    aa_row[i] = pairwise_sum(nu, [&](std::size_t j) {
      if (j == i) return 0.0;
      const double d = av[i * nu + j] - abar;
      return d * d;
    });
    bb_row[i] = pairwise_sum(nu, [&](std::size_t j) {
      if (j == i) return 0.0;
      const double d = bv[i * nu + j] - bbar;
      return d * d;
    });
  }
  const double s_ab = pairwise_sum(cross_row);
  const double s_aa = pairwise_sum(aa_row);
  const double s_bb = pairwise_sum(bb_row);

  const double norm = static_cast<double>(n) * (n - 1) - 1.0;
  e.phi0_hat = s_ab / norm;
  e.eta2_alpha_hat = s_aa / norm;
  e.eta2_beta_hat = s_bb / norm;

  const double tol_a = 1e-14 * max_abs_entry(a) * max_abs_entry(a);
  const double tol_b = 1e-14 * max_abs_entry(b) * max_abs_entry(b);
  if (e.eta2_alpha_hat <= tol_a) {
    fail(ErrorCode::DegenerateMatrix,
         "first matrix has (numerically) constant off-diagonal entries");
  }
  if (e.eta2_beta_hat <= tol_b) {
    fail(ErrorCode::DegenerateMatrix,
         "second matrix has (numerically) constant off-diagonal entries");
  }

  // The shared normalizer cancels in the ratio, so rho_hat is computed from
  // the raw sums; Cauchy-Schwarz then bounds it by 1 exactly.
  e.rho_hat = s_ab / std::sqrt(s_aa * s_bb);

  const double inner = 1.0 / static_cast<double>(n - 1);
  const double sum_sq_proj = pairwise_sum(nu, [&](std::size_t i) {
    const double p = cross_row[i] * inner;
    return p * p;
  });
  e.eta1_phi_hat = eta1_outer_factor(e.correction, n) * sum_sq_proj;
  e.v_hat = 4.0 * e.eta1_phi_hat / (e.eta2_alpha_hat * e.eta2_beta_hat);
  return e;
}

double unstudentized_statistic(const UStatEstimates& e) {
  return std::sqrt(static_cast<double>(e.n)) * e.rho_hat;
}

double studentized_statistic(const UStatEstimates& e) {
  if (e.v_hat <= 0.0) {
    fail(ErrorCode::ZeroVariance,
         "studentization impossible: estimated variance v_hat is zero");
  }
  return std::sqrt(static_cast<double>(e.n)) * e.rho_hat / std::sqrt(e.v_hat);
}

}  // namespace dyadperm
