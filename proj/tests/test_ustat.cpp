#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "dyadperm/dyad_matrix.hpp"
#include "dyadperm/rng.hpp"
#include "dyadperm/ustat.hpp"
#include "oracles.hpp"

using namespace dyadperm;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DyadError& e) {
    return e.code();
  }
  FAIL("expected a DyadError");
  return ErrorCode::UsageError;
}

DyadMatrix negated(const DyadMatrix& m) {
  std::vector<double> v = m.values();
  for (double& x : v) x = -x;
  return new_dyad_matrix(m.n(), std::move(v));
}

DyadMatrix scaled(const DyadMatrix& m, double c) {
  std::vector<double> v = m.values();
  for (double& x : v) x *= c;
  return new_dyad_matrix(m.n(), std::move(v));
}

}  // namespace

TEST_SUITE_BEGIN("ustat");

TEST_CASE("self correlation is one, sign flip is minus one") {
  auto g = stream_rng(41, "test", 0);
  const DyadMatrix a = oracle::random_matrix(6, g);
  CHECK(qap_estimates(a, a).rho_hat == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(qap_estimates(a, negated(a)).rho_hat ==
        doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("every estimate matches the nested-loop oracle at n=5") {
  auto g = stream_rng(42, "test", 1);
  for (int rep = 0; rep < 10; ++rep) {
    const DyadMatrix a = oracle::random_matrix(5, g);
    const DyadMatrix b = oracle::random_matrix(5, g);
    for (auto corr : {Eta1Correction::Plain, Eta1Correction::Sen}) {
      const UStatEstimates e = qap_estimates(a, b, corr);
      const oracle::Estimates o = oracle::qap_estimates(a, b, corr);
      CHECK(e.phi0_hat == doctest::Approx(o.phi0).epsilon(1e-12));
      CHECK(e.eta2_alpha_hat == doctest::Approx(o.eta2a).epsilon(1e-12));
      CHECK(e.eta2_beta_hat == doctest::Approx(o.eta2b).epsilon(1e-12));
      CHECK(e.eta1_phi_hat == doctest::Approx(o.eta1).epsilon(1e-12));
      CHECK(e.rho_hat == doctest::Approx(o.rho).epsilon(1e-12));
      CHECK(e.v_hat == doctest::Approx(o.v).epsilon(1e-12));
    }
  }
}

TEST_CASE("correction resolution and the sen/plain ratio") {
  CHECK(resolve_eta1_correction(Eta1Correction::Auto, 7) ==
        Eta1Correction::Plain);
  CHECK(resolve_eta1_correction(Eta1Correction::Auto, 8) == Eta1Correction::Sen);
  CHECK(code_of([] { resolve_eta1_correction(Eta1Correction::Sen, 4); }) ==
        ErrorCode::TooSmall);

  auto g = stream_rng(43, "test", 2);
  const int n = 9;
  const DyadMatrix a = oracle::random_matrix(n, g);
  const DyadMatrix b = oracle::random_matrix(n, g);
  const double sen = qap_estimates(a, b, Eta1Correction::Sen).eta1_phi_hat;
  const double plain = qap_estimates(a, b, Eta1Correction::Plain).eta1_phi_hat;
  const double ratio = n * (n - 1.0) / ((n - 2.0) * (n - 4.0));
  CHECK(sen == doctest::Approx(plain * ratio).epsilon(1e-12));
}

TEST_CASE("statistic arithmetic") {
  UStatEstimates e;
  e.n = 100;
  e.rho_hat = 0.2;
  e.v_hat = 4.0;
  CHECK(studentized_statistic(e) == doctest::Approx(1.0).epsilon(1e-14));
  e.rho_hat = 0.0;
  CHECK(studentized_statistic(e) == 0.0);
  CHECK(unstudentized_statistic(e) == 0.0);
  e.n = 25;
  e.rho_hat = 0.4;
  CHECK(unstudentized_statistic(e) == doctest::Approx(2.0).epsilon(1e-14));
  e.v_hat = 0.0;
  CHECK(code_of([&] { studentized_statistic(e); }) == ErrorCode::ZeroVariance);
}

TEST_CASE("unstudentized statistic composes with the formula oracle at n=4") {
  auto g = stream_rng(44, "test", 3);
  const DyadMatrix a = oracle::random_matrix(4, g);
  const DyadMatrix b = oracle::random_matrix(4, g);
  const UStatEstimates e = qap_estimates(a, b);
  const oracle::Estimates o =
      oracle::qap_estimates(a, b, Eta1Correction::Plain);
  CHECK(unstudentized_statistic(e) ==
        doctest::Approx(2.0 * o.rho).epsilon(1e-12));
}

TEST_CASE("errors: dimension mismatch and degenerate inputs") {
  auto g = stream_rng(45, "test", 4);
  const DyadMatrix a = oracle::random_matrix(5, g);
  const DyadMatrix b = oracle::random_matrix(6, g);
  CHECK(code_of([&] { qap_estimates(a, b); }) == ErrorCode::DimensionMismatch);

  std::vector<double> c(25, 2.0);
  for (int i = 0; i < 5; ++i) c[i * 5 + i] = 0.0;
  const DyadMatrix constant = new_dyad_matrix(5, std::move(c));
  const DyadMatrix ok = oracle::random_matrix(5, g);
  CHECK(code_of([&] { qap_estimates(constant, ok); }) ==
        ErrorCode::DegenerateMatrix);
  CHECK(code_of([&] { qap_estimates(ok, constant); }) ==
        ErrorCode::DegenerateMatrix);
}

TEST_CASE("invariance properties") {
  auto g = stream_rng(46, "test", 5);
  const int n = 9;
  const DyadMatrix a = oracle::random_matrix(n, g);
  const DyadMatrix b = oracle::random_matrix(n, g);

  std::vector<int> pi(n);
  for (int i = 0; i < n; ++i) pi[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(pi[i], pi[bounded(g, i + 1)]);

  const UStatEstimates base = qap_estimates(a, b);

  // Joint relabeling leaves every estimate unchanged.
  const UStatEstimates joint = qap_estimates(apply_double_permutation(a, pi),
                                             apply_double_permutation(b, pi));
  CHECK(joint.phi0_hat == doctest::Approx(base.phi0_hat).epsilon(1e-11));
  CHECK(joint.eta1_phi_hat ==
        doctest::Approx(base.eta1_phi_hat).epsilon(1e-11));
  CHECK(joint.rho_hat == doctest::Approx(base.rho_hat).epsilon(1e-11));
  CHECK(joint.v_hat == doctest::Approx(base.v_hat).epsilon(1e-11));

  // Permuting one side moves the numerator but not the eta2 denominators.
  const UStatEstimates marg = qap_estimates(apply_double_permutation(a, pi), b);
  CHECK(marg.eta2_alpha_hat ==
        doctest::Approx(base.eta2_alpha_hat).epsilon(1e-12));
  CHECK(marg.eta2_beta_hat ==
        doctest::Approx(base.eta2_beta_hat).epsilon(1e-12));

  // Symmetry in the two arguments.
  const UStatEstimates swapped = qap_estimates(b, a);
  CHECK(swapped.rho_hat == doctest::Approx(base.rho_hat).epsilon(1e-12));

  // Scale equivariance: c*a leaves rho_hat fixed and scales phi0_hat by c.
  const UStatEstimates sc = qap_estimates(scaled(a, 3.25), b);
  CHECK(sc.rho_hat == doctest::Approx(base.rho_hat).epsilon(1e-12));
  CHECK(sc.phi0_hat == doctest::Approx(3.25 * base.phi0_hat).epsilon(1e-12));

  CHECK(base.eta1_phi_hat >= 0.0);
  CHECK(std::abs(base.rho_hat) <= 1.0 + 1e-9);
}

TEST_SUITE_END();
