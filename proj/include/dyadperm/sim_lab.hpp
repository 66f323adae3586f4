#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dyadperm/dyad_matrix.hpp"
#include "dyadperm/perm_engine.hpp"
#include "dyadperm/regress.hpp"
#include "dyadperm/ustat.hpp"

// Synthetic dyadic data generators, closed-form reference laws, and the
// experiment driver behind the simulate subcommand. All randomness flows
// through the seeded stream family from rng.hpp: dataset d of an experiment
// draws its data from streams labeled "data" under derive_seed(seed,
// "dataset", d) and its permutations from the disjoint "perm" streams, so a
// single seed pins every number an experiment produces.

namespace dyadperm {

enum class KernelKind { PairwiseAverage, Custom };

// Latent feature laws. The first two are the conservative and
// anti-conservative showcase settings; IidBivariateNormal draws correlated
// normal pairs (exactly independent at rho_rs = 0); BivariateNormalProduct
// drives the regression design: (T, S) bivariate normal with correlation
// feature_corr, Z standard normal, R = T * Z.
enum class FeatureModel {
  CircleUV,
  SinhCos,
  IidBivariateNormal,
  BivariateNormalProduct,
};

const char* kernel_kind_name(KernelKind k);
const char* feature_model_name(FeatureModel m);

struct KernelSpec {
  KernelKind kind = KernelKind::PairwiseAverage;
  FeatureModel feature_model = FeatureModel::IidBivariateNormal;
  // Named reals: "rho_rs" (IidBivariateNormal), "feature_corr",
  // "theta0", "theta1", "rho_coef", "zeta_sd", "latent_noise" (regression).
  std::map<std::string, double> params;

  double param(const std::string& key, double fallback) const {
    const auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }
};

// Draws the latent unit features (R_i, S_i) for a pair model. Exposed so
// tests can check feature-level moments against the matrices built from the
// same seed.
std::pair<std::vector<double>, std::vector<double>> sample_features(
    const KernelSpec& spec, int n, std::uint64_t seed);

// Applies the pairwise-average kernel (r + r') / sqrt(2) to the sampled
// features of both coordinates: a_ij = alpha(R_i, R_j), b_ij = beta(S_i, S_j).
std::pair<DyadMatrix, DyadMatrix> generate_dyadic_pair(const KernelSpec& spec,
                                                       int n,
                                                       std::uint64_t seed);

// Regression generator: a = theta0 + theta1 * b + rho_coef * c + eps + zeta
// with b, c, eps the pairwise averages of S, T, R and zeta i.i.d. dyad noise.
// Defaults reproduce the weak-null design (theta0 = theta1 = 0, rho_coef = 1).
// latent_noise scales the eps kernel; feature_corr = 0 makes the focal
// covariate independent of everything else (the strong-null design).
struct MrqapParams {
  double theta0 = 0.0;
  double theta1 = 0.0;
  double rho_coef = 1.0;
  double zeta_sd = 1.0;
  double latent_noise = 1.0;
  double feature_corr = 0.5;
};

MrqapParams mrqap_params_from(const KernelSpec& spec);

DyadDesign generate_mrqap_design(int n, const MrqapParams& params,
                                 std::uint64_t seed);

enum class Hypothesis { WeakNull, StrongNull };
enum class StatKind { Unstudentized, Studentized, CoefNorm, Wald };

const char* hypothesis_name(Hypothesis h);
const char* stat_kind_name(StatKind s);

enum class LawKind { Normal, ChiSquare };

struct ReferenceLaw {
  LawKind kind = LawKind::Normal;
  double mean = 0.0;
  double variance = 1.0;
  int df = 1;

  double cdf(double x) const;
};

// Closed-form limit law of the requested statistic. WeakNull selects the
// sampling law across datasets, StrongNull the permutation law of one
// dataset's replicates. Raises NoClosedForm when the model/statistic pair has
// no pinned constant.
ReferenceLaw asymptotic_reference(const KernelSpec& spec, Hypothesis hyp,
                                  StatKind stat, int df = 1);

// High-precision Simpson evaluation of E[(RS)^2] for the two settings driven
// by a single uniform variable; serves as the cross-check oracle for the
// weak-null variance constants (1/2 and about 1.90).
double weak_null_variance_quadrature(const KernelSpec& spec);

double normal_cdf(double x, double mean = 0.0, double variance = 1.0);
double chi_square_cdf(double x, int df);
// Regularized lower incomplete gamma P(a, x).
double regularized_gamma_p(double a, double x);

// Exact two-sided Kolmogorov-Smirnov sup-distance between the sample and a
// continuous reference law (no binning). Sorts a copy of the samples.
double ks_distance(std::vector<double> samples, const ReferenceLaw& law);

enum class ExperimentLaw { SamplingLaw, PermutationLaw };

const char* experiment_law_name(ExperimentLaw law);

// SamplingLaw: `datasets` independent draws, one observed statistic each,
// plus a permutation p-value per dataset when inner_reps > 0. The reference
// is the weak-null sampling law. PermutationLaw: one dataset, inner_reps
// permutation replicates as the samples, referenced against the strong-null
// permutation law.
struct ExperimentConfig {
  KernelSpec spec;
  ExperimentLaw law = ExperimentLaw::SamplingLaw;
  int n = 0;
  int datasets = 1;
  StatKind statistic = StatKind::Studentized;
  Strategy strategy = Strategy::PermuteFocal;
  int inner_reps = 0;
  std::vector<double> alphas{0.01, 0.05, 0.10};
  std::uint64_t seed = 0;
  Eta1Correction correction = Eta1Correction::Auto;
};

struct ExperimentSummary {
  int n = 0;
  int reps = 0;
  StatKind statistic = StatKind::Studentized;
  ExperimentLaw law = ExperimentLaw::SamplingLaw;
  ReferenceLaw reference;
  // Sorted ascending so aggregation is worker-count independent.
  std::vector<double> statistic_samples;
  double sample_mean = 0.0;
  double sample_variance = 0.0;
  double ks_distance = 0.0;
  // alpha -> share of dataset p-values at or below alpha; filled only for
  // SamplingLaw runs with inner_reps > 0.
  std::map<double, double> rejection_rate_at;
};

ExperimentSummary run_experiment(const ExperimentConfig& config);

}  // namespace dyadperm
