#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dyadperm/dyad_matrix.hpp"
#include "dyadperm/regress.hpp"
#include "dyadperm/rng.hpp"
#include "dyadperm/ustat.hpp"

namespace dyadperm {

// What gets relabeled per replicate. PermuteOutcome relabels A; PermuteFocal
// relabels every focal matrix jointly; PermuteResidualFocal first replaces the
// focal block by its residuals on an intercept plus the nuisance matrices and
// relabels those; PermuteResidualOutcome does the same to the outcome.
enum class Strategy {
  PermuteOutcome,
  PermuteFocal,
  PermuteResidualFocal,
  PermuteResidualOutcome,
};

enum class QapStatistic { Unstudentized, Studentized };

// CoefNorm is the signed sqrt(n) * coef for a single focal matrix and the
// squared norm n * |F'w|^2 for several; Wald is the studentized quadratic
// form from regress.
enum class MrqapStatistic { CoefNorm, Wald };

enum class SamplingMode { ExactEnumeration, MonteCarlo };

// Tail rule used for the p-value: TwoSided applies the count
// p = (1/M) [#{W_pi > |W|} + #{W_pi <= -|W|}] for signed statistics,
// UpperTail applies p = (1/M) #{W_pi >= W} for nonnegative quadratic forms.
enum class PValueTail { TwoSided, UpperTail };

const char* strategy_name(Strategy s);
const char* qap_statistic_name(QapStatistic s);
const char* mrqap_statistic_name(MrqapStatistic s);
const char* sampling_mode_name(SamplingMode m);
const char* tail_name(PValueTail t);

// Complete record of one permutation test. In ExactEnumeration mode the
// replicates run over all n! permutations in lexicographic order starting at
// the identity, n_reps = n!, and the p-value is the raw count against the
// identity replicate. In MonteCarlo mode replicate r is drawn from the rng
// stream (seed, "perm", r), so values depend only on r and the report is
// identical for any worker count; the observed value joins the count as one
// pseudo-replicate. Either way the p-value is floored at 1/M, keeping it in
// (0, 1].
struct PermutationReport {
  SamplingMode mode = SamplingMode::MonteCarlo;
  int n_reps = 0;
  std::uint64_t seed = 0;
  std::string rng_algorithm;
  Strategy strategy = Strategy::PermuteOutcome;
  PValueTail tail = PValueTail::TwoSided;
  double observed = 0.0;
  std::vector<double> replicates;  // replicate-index order, not sorted
  double p_value = 0.0;
  std::vector<std::string> warnings;
};

// Uniform draw over all n! permutations of {0..n-1} (Fisher-Yates).
std::vector<int> random_permutation(int n, SplitMix64& g);

// L(t) = (1/M) #{replicate <= t}, the empirical CDF as written in the
// two-sided p-value formula.
double permutation_cdf(const std::vector<double>& replicates, double t);

// p = 1 - L(|ref|) + L(-|ref|), counting replicates above +|ref| strictly and
// at or below -|ref| inclusively. include_reference adds the reference as one
// extra replicate (the Monte Carlo pseudo-count). Result clamped to [1/M, 1].
double two_sided_p_value(double reference, const std::vector<double>& replicates,
                         bool include_reference);

// p = (1/M) #{replicate >= ref}, same pseudo-count and clamp rules.
double upper_tail_p_value(double reference, const std::vector<double>& replicates,
                          bool include_reference);

// Pair test: per replicate the outcome A is relabeled as A_pi and the chosen
// statistic recomputed against the fixed B. Two-sided p-value. Exact
// enumeration replaces Monte Carlo whenever n! <= max(n_reps, 50000).
PermutationReport run_qap(const DyadMatrix& a, const DyadMatrix& b,
                          QapStatistic statistic, int n_reps,
                          std::uint64_t seed,
                          Eta1Correction correction = Eta1Correction::Auto);

// Regression test: per replicate the strategy's matrices are relabeled and
// the design refit. Wald and multi-coefficient CoefNorm are upper-tail,
// single-coefficient CoefNorm is two-sided. The observed value always comes
// from the plain fit of the original design, so it is identical across
// strategies.
PermutationReport run_mrqap(const DyadDesign& d, Strategy strategy,
                            MrqapStatistic statistic, int n_reps,
                            std::uint64_t seed,
                            Eta1Correction correction = Eta1Correction::Auto);

}  // namespace dyadperm
