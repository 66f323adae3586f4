#include "dyadperm/perm_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <utility>

#include "dyadperm/error.hpp"
#include "dyadperm/linalg.hpp"
#include "dyadperm/parallel.hpp"
#include "dyadperm/summation.hpp"

namespace dyadperm {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::PermuteOutcome: return "permute-outcome";
    case Strategy::PermuteFocal: return "permute-focal";
    case Strategy::PermuteResidualFocal: return "permute-residual-focal";
    case Strategy::PermuteResidualOutcome: return "permute-residual-outcome";
  }
  return "unknown";
}

const char* qap_statistic_name(QapStatistic s) {
  return s == QapStatistic::Unstudentized ? "unstudentized" : "studentized";
}

const char* mrqap_statistic_name(MrqapStatistic s) {
  return s == MrqapStatistic::CoefNorm ? "coef-norm" : "wald";
}

const char* sampling_mode_name(SamplingMode m) {
  return m == SamplingMode::ExactEnumeration ? "exact-enumeration"
                                             : "monte-carlo";
}

const char* tail_name(PValueTail t) {
  return t == PValueTail::TwoSided ? "two-sided" : "upper-tail";
}

namespace {

// n! when it is at most cap, otherwise 0.
unsigned long long factorial_capped(int n, unsigned long long cap) {
  unsigned long long f = 1;
  for (int i = 2; i <= n; ++i) {
    if (f > cap / static_cast<unsigned long long>(i)) return 0;
    f *= static_cast<unsigned long long>(i);
  }
  return f <= cap ? f : 0;
}

// out[i] = sum_j u[pi(i)*n + pi(j)] * v[i*n + j]. The j = i term contributes
// nothing because v carries a zero diagonal. Four independent accumulator
// lanes in a fixed pattern, so the result is identical for any worker count.
void permuted_row_sums(int n, const double* u, const double* v, const int* pi,
                       double* out) {
  for (int i = 0; i < n; ++i) {
    const double* urow = u + static_cast<std::size_t>(pi[i]) * n;
    const double* vrow = v + static_cast<std::size_t>(i) * n;
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      s0 += urow[pi[j]] * vrow[j];
      s1 += urow[pi[j + 1]] * vrow[j + 1];
      s2 += urow[pi[j + 2]] * vrow[j + 2];
      s3 += urow[pi[j + 3]] * vrow[j + 3];
    }
    for (; j < n; ++j) s0 += urow[pi[j]] * vrow[j];
    out[i] = (s0 + s1) + (s2 + s3);
  }
}

// Grand-mean-centered copy with a zero diagonal, so row-sum passes can run
// over all j without a diagonal branch.
std::vector<double> centered_values(const DyadMatrix& m) {
  const int n = m.n();
  const double bar = off_diagonal_mean(m);
  std::vector<double> v(m.values());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      v[static_cast<std::size_t>(i) * n + j] =
          i == j ? 0.0 : v[static_cast<std::size_t>(i) * n + j] - bar;
  return v;
}

struct QapEvaluator {
  int n = 0;
  double norm = 0.0;          // n(n-1) - 1
  double factor = 0.0;        // eta1 outer factor
  double unstud_denom = 0.0;  // sqrt(eta2_alpha * eta2_beta)
  bool studentized = false;
  std::vector<double> ca, cb;

  double operator()(const std::vector<int>& pi) const {
    std::vector<double> s(n);
    permuted_row_sums(n, ca.data(), cb.data(), pi.data(), s.data());
    const double phi0 = pairwise_sum(s) / norm;
    const double root_n = std::sqrt(static_cast<double>(n));
    if (!studentized) return root_n * phi0 / unstud_denom;
    // eta2 factors are permutation invariant and cancel between rho_hat and
    // v_hat, leaving sqrt(n) phi0 / (2 sqrt(eta1))
    const double eta1 =
        factor * pairwise_sum(static_cast<std::size_t>(n), [&](std::size_t i) {
          const double r = s[i] / (n - 1);
          return r * r;
        });
    if (eta1 <= 0.0) return 0.0;
    return root_n * phi0 / (2.0 * std::sqrt(eta1));
  }
};

// Per-replicate MRQAP refit that reuses everything a relabeling cannot
// change. Row-sum tables r_i(u, v) = sum_j u_ij v_ij exist for every pair of
// matrices under the identity labeling; a replicate recomputes only the
// passes that mix a permuted matrix with a fixed one, reads both-permuted
// rows by gathering r_{pi(i)}, and keeps fixed-fixed rows as is. Sigma
// entries within the permuted set and within the fixed set are copied from
// the identity values, which the relabeling leaves exactly invariant.
struct MrqapEvaluator {
  int n = 0, p = 0, k = 0;  // k = p + q regressors, focal first
  bool outcome_permuted = false;
  bool wald = false;
  double factor = 0.0;  // eta1 outer factor
  double pairs = 0.0;   // n(n-1)

  std::vector<double> y;
  std::vector<std::vector<double>> x;
  std::vector<std::vector<double>> ryx;               // [c][i]
  std::vector<std::vector<std::vector<double>>> rxx;  // [a][b][i], a <= b
  Eigen::MatrixXd sigma0;
  Eigen::VectorXd sigma_a0;
  Eigen::MatrixXd sigma_inv0;

  const std::vector<double>& xx_rows(int a, int b) const {
    return a <= b ? rxx[a][b - a] : rxx[b][a - b];
  }

  void build(const DyadMatrix& outcome, const std::vector<DyadMatrix>& focal,
             const std::vector<DyadMatrix>& nuisance, bool permute_outcome,
             Eta1Correction resolved, bool wald_statistic_kind) {
    n = outcome.n();
    p = static_cast<int>(focal.size());
    k = p + static_cast<int>(nuisance.size());
    outcome_permuted = permute_outcome;
    wald = wald_statistic_kind;
    factor = eta1_outer_factor(resolved, n);
    pairs = static_cast<double>(n) * (n - 1);

    y = centered_values(outcome);
    x.reserve(k);
    for (const auto& m : focal) x.push_back(centered_values(m));
    for (const auto& m : nuisance) x.push_back(centered_values(m));

    std::vector<int> id(n);
    std::iota(id.begin(), id.end(), 0);
    ryx.assign(k, std::vector<double>(n));
    for (int c = 0; c < k; ++c)
      permuted_row_sums(n, y.data(), x[c].data(), id.data(), ryx[c].data());
    rxx.resize(k);
    for (int a = 0; a < k; ++a) {
      rxx[a].assign(k - a, std::vector<double>(n));
      for (int b = a; b < k; ++b)
        permuted_row_sums(n, x[a].data(), x[b].data(), id.data(),
                          rxx[a][b - a].data());
    }

    sigma0.resize(k, k);
    sigma_a0.resize(k);
    for (int a = 0; a < k; ++a) {
      sigma_a0(a) = pairwise_sum(ryx[a]) / pairs;
      for (int b = a; b < k; ++b) {
        const double v = pairwise_sum(xx_rows(a, b)) / pairs;
        sigma0(a, b) = v;
        sigma0(b, a) = v;
      }
    }
    sigma_inv0 = spd_inverse(sigma0, ErrorCode::SingularDesign,
                             "permutation design covariance");
  }

  double operator()(const std::vector<int>& pi) const {
    // fresh passes for (permuted, fixed) pairs
    std::vector<std::vector<double>> fresh_y;  // outcome x regressor rows
    std::vector<std::vector<double>> fresh_bc; // focal x nuisance rows, b*(k-p)+l
    if (outcome_permuted) {
      fresh_y.assign(k, std::vector<double>(n));
      for (int c = 0; c < k; ++c)
        permuted_row_sums(n, y.data(), x[c].data(), pi.data(),
                          fresh_y[c].data());
    } else {
      fresh_y.assign(p, std::vector<double>(n));
      for (int b = 0; b < p; ++b)
        permuted_row_sums(n, x[b].data(), y.data(), pi.data(),
                          fresh_y[b].data());
      fresh_bc.assign(static_cast<std::size_t>(p) * (k - p),
                      std::vector<double>(n));
      for (int b = 0; b < p; ++b)
        for (int l = p; l < k; ++l)
          permuted_row_sums(n, x[b].data(), x[l].data(), pi.data(),
                            fresh_bc[static_cast<std::size_t>(b) * (k - p) +
                                     (l - p)].data());
    }

    // r_i(y*, c*) and r_i(x_a*, x_c*) for the relabeled effective design
    const auto y_row = [&](int i, int c) -> double {
      if (outcome_permuted) return fresh_y[c][i];
      return c < p ? fresh_y[c][i] : ryx[c][i];
    };
    const auto x_row = [&](int i, int a, int c) -> double {
      if (outcome_permuted) return xx_rows(a, c)[i];
      const bool af = a < p, cf = c < p;
      if (af && cf) return xx_rows(a, c)[pi[i]];
      if (!af && !cf) return xx_rows(a, c)[i];
      const int b = af ? a : c, l = af ? c : a;
      return fresh_bc[static_cast<std::size_t>(b) * (k - p) + (l - p)][i];
    };

    Eigen::MatrixXd sigma = sigma0;
    Eigen::VectorXd sigma_a = sigma_a0;
    if (outcome_permuted) {
      for (int c = 0; c < k; ++c) sigma_a(c) = pairwise_sum(fresh_y[c]) / pairs;
    } else {
      for (int b = 0; b < p; ++b) sigma_a(b) = pairwise_sum(fresh_y[b]) / pairs;
      for (int b = 0; b < p; ++b)
        for (int l = p; l < k; ++l) {
          const double v =
              pairwise_sum(
                  fresh_bc[static_cast<std::size_t>(b) * (k - p) + (l - p)]) /
              pairs;
          sigma(b, l) = v;
          sigma(l, b) = v;
        }
    }

    const Eigen::MatrixXd sigma_inv =
        outcome_permuted
            ? sigma_inv0
            : spd_inverse(sigma, ErrorCode::SingularDesign,
                          "permuted regressor covariance");
    const Eigen::VectorXd w = sigma_inv * sigma_a;

    // t_i(c) = r_i(y*, c*) - sum_m w_m r_i(m*, c*) = (n-1) phi1_i(c)
    Eigen::MatrixXd t(n, k);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < k; ++c) {
        double v = y_row(i, c);
        for (int m = 0; m < k; ++m) v -= w(m) * x_row(i, m, c);
        t(i, c) = v;
      }

    Eigen::MatrixXd h(k, k);
    const double scale = factor / (static_cast<double>(n - 1) * (n - 1));
    for (int a = 0; a < k; ++a)
      for (int c = a; c < k; ++c) {
        const double v =
            scale * pairwise_sum(static_cast<std::size_t>(n), [&](std::size_t i) {
              return t(static_cast<Eigen::Index>(i), a) *
                     t(static_cast<Eigen::Index>(i), c);
            });
        h(a, c) = v;
        h(c, a) = v;
      }

    if (!wald) {
      if (p == 1) return std::sqrt(static_cast<double>(n)) * w(0);
      return n * w.head(p).squaredNorm();
    }
    const Eigen::MatrixXd vhat = 4.0 * sigma_inv * h * sigma_inv;
    const Eigen::MatrixXd g = 0.5 * (vhat.topLeftCorner(p, p) +
                                     vhat.topLeftCorner(p, p).transpose());
    return n * psd_quadratic_inverse_form(g, w.head(p));
  }
};

// Shared replicate loop: exact enumeration in lexicographic order from the
// identity when n! fits the cap, otherwise seeded Monte Carlo with one rng
// stream per replicate index.
template <class Eval>
void drive(int n, int requested_reps, std::uint64_t seed, const Eval& eval,
           PermutationReport& rep) {
  const auto cap = std::max<unsigned long long>(
      static_cast<unsigned long long>(requested_reps), 50000ull);
  const unsigned long long fact = factorial_capped(n, cap);
  if (fact != 0) {
    rep.mode = SamplingMode::ExactEnumeration;
    rep.replicates.resize(fact);
    std::vector<int> pi(n);
    std::iota(pi.begin(), pi.end(), 0);
    std::size_t r = 0;
    do {
      rep.replicates[r++] = eval(pi);
    } while (std::next_permutation(pi.begin(), pi.end()));
  } else {
    rep.mode = SamplingMode::MonteCarlo;
    rep.replicates.resize(static_cast<std::size_t>(requested_reps));
    parallel_for(static_cast<std::size_t>(requested_reps), [&](std::size_t r) {
      SplitMix64 g = stream_rng(seed, "perm", r);
      const std::vector<int> pi = random_permutation(n, g);
      rep.replicates[r] = eval(pi);
    });
    if (requested_reps < 100)
      rep.warnings.push_back(
          "BudgetTooSmall: fewer than 100 Monte Carlo replicates, p-value "
          "resolution is 1/" +
          std::to_string(requested_reps + 1));
  }
  rep.n_reps = static_cast<int>(rep.replicates.size());
}

// In exact mode the identity replicate is the reference value; it equals the
// observed statistic up to evaluation order, and using it keeps the tie
// counts at +-|W| exact. Monte Carlo references the observed value itself and
// adds it as the pseudo-replicate.
void attach_p_value(PermutationReport& rep) {
  const bool mc = rep.mode == SamplingMode::MonteCarlo;
  const double ref = mc ? rep.observed : rep.replicates.front();
  rep.p_value = rep.tail == PValueTail::TwoSided
                    ? two_sided_p_value(ref, rep.replicates, mc)
                    : upper_tail_p_value(ref, rep.replicates, mc);
}

}  // namespace

std::vector<int> random_permutation(int n, SplitMix64& g) {
  if (n < 1) fail(ErrorCode::UsageError, "permutation size must be positive");
  std::vector<int> pi(n);
  std::iota(pi.begin(), pi.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const int j =
        static_cast<int>(bounded(g, static_cast<std::uint64_t>(i) + 1));
    std::swap(pi[i], pi[j]);
  }
  return pi;
}

double permutation_cdf(const std::vector<double>& replicates, double t) {
  if (replicates.empty())
    fail(ErrorCode::EmptyReplicates, "permutation_cdf needs replicates");
  std::size_t count = 0;
  for (double w : replicates) count += w <= t ? 1 : 0;
  return static_cast<double>(count) / static_cast<double>(replicates.size());
}

double two_sided_p_value(double reference,
                         const std::vector<double>& replicates,
                         bool include_reference) {
  if (replicates.empty())
    fail(ErrorCode::EmptyReplicates, "p-value needs replicates");
  const double hi = std::abs(reference);
  std::size_t count = 0;
  for (double w : replicates) count += (w > hi || w <= -hi) ? 1 : 0;
  if (include_reference && reference <= -hi) ++count;
  const double m =
      static_cast<double>(replicates.size()) + (include_reference ? 1.0 : 0.0);
  return std::clamp(static_cast<double>(count) / m, 1.0 / m, 1.0);
}

double upper_tail_p_value(double reference,
                          const std::vector<double>& replicates,
                          bool include_reference) {
  if (replicates.empty())
    fail(ErrorCode::EmptyReplicates, "p-value needs replicates");
  std::size_t count = include_reference ? 1 : 0;
  for (double w : replicates) count += w >= reference ? 1 : 0;
  const double m =
      static_cast<double>(replicates.size()) + (include_reference ? 1.0 : 0.0);
  return std::clamp(static_cast<double>(count) / m, 1.0 / m, 1.0);
}

PermutationReport run_qap(const DyadMatrix& a, const DyadMatrix& b,
                          QapStatistic statistic, int n_reps,
                          std::uint64_t seed, Eta1Correction correction) {
  if (n_reps < 1) fail(ErrorCode::UsageError, "n_reps must be at least 1");
  const UStatEstimates est = qap_estimates(a, b, correction);
  const int n = a.n();

  QapEvaluator ev;
  ev.n = n;
  ev.norm = static_cast<double>(n) * (n - 1) - 1.0;
  ev.factor = eta1_outer_factor(est.correction, n);
  ev.unstud_denom = std::sqrt(est.eta2_alpha_hat * est.eta2_beta_hat);
  ev.studentized = statistic == QapStatistic::Studentized;
  ev.ca = centered_values(a);
  ev.cb = centered_values(b);

  PermutationReport rep;
  rep.seed = seed;
  rep.rng_algorithm = kRngAlgorithm;
  rep.strategy = Strategy::PermuteOutcome;
  rep.tail = PValueTail::TwoSided;

  std::vector<int> id(n);
  std::iota(id.begin(), id.end(), 0);
  rep.observed = ev(id);

  drive(n, n_reps, seed, ev, rep);
  attach_p_value(rep);
  return rep;
}

PermutationReport run_mrqap(const DyadDesign& d, Strategy strategy,
                            MrqapStatistic statistic, int n_reps,
                            std::uint64_t seed, Eta1Correction correction) {
  if (n_reps < 1) fail(ErrorCode::UsageError, "n_reps must be at least 1");

  // constant outcomes cannot be permuted into anything informative
  {
    const int n = d.outcome.n();
    const double abar = off_diagonal_mean(d.outcome);
    double spread = 0.0, peak = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        spread = std::max(spread, std::abs(d.outcome(i, j) - abar));
        peak = std::max(peak, std::abs(d.outcome(i, j)));
      }
    if (spread * spread <= 1e-14 * peak * peak || peak == 0.0)
      fail(ErrorCode::DegenerateMatrix, "outcome matrix is effectively constant");
  }

  const DyadFit fit = fit_dyadic_ols(d, correction);
  const int n = fit.n, p = fit.p;

  PermutationReport rep;
  rep.seed = seed;
  rep.rng_algorithm = kRngAlgorithm;
  rep.strategy = strategy;
  if (statistic == MrqapStatistic::Wald) {
    rep.observed = wald_statistic(fit, WaldScope::FocalBlock);
    rep.tail = PValueTail::UpperTail;
  } else if (p == 1) {
    rep.observed = std::sqrt(static_cast<double>(n)) * fit.coef(0);
    rep.tail = PValueTail::TwoSided;
  } else {
    rep.observed = n * fit.coef.head(p).squaredNorm();
    rep.tail = PValueTail::UpperTail;
  }

  DyadMatrix eff_outcome = d.outcome;
  std::vector<DyadMatrix> eff_focal = d.focal;
  if (strategy == Strategy::PermuteResidualFocal)
    eff_focal = residualize(d.focal, d.nuisance);
  else if (strategy == Strategy::PermuteResidualOutcome)
    eff_outcome = residualize({d.outcome}, d.nuisance).front();
  const bool outcome_perm = strategy == Strategy::PermuteOutcome ||
                            strategy == Strategy::PermuteResidualOutcome;

  MrqapEvaluator ev;
  ev.build(eff_outcome, eff_focal, d.nuisance, outcome_perm, fit.correction,
           statistic == MrqapStatistic::Wald);

  drive(n, n_reps, seed, ev, rep);
  attach_p_value(rep);
  return rep;
}

}  // namespace dyadperm
