#include "dyadperm/sim_lab.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>

#include "dyadperm/error.hpp"
#include "dyadperm/parallel.hpp"
#include "dyadperm/rng.hpp"
#include "dyadperm/summation.hpp"

namespace dyadperm {

const char* kernel_kind_name(KernelKind k) {
  return k == KernelKind::PairwiseAverage ? "pairwise-average" : "custom";
}

const char* feature_model_name(FeatureModel m) {
  switch (m) {
    case FeatureModel::CircleUV:
      return "circle-uv";
    case FeatureModel::SinhCos:
      return "sinh-cos";
    case FeatureModel::IidBivariateNormal:
      return "iid-bivariate-normal";
    case FeatureModel::BivariateNormalProduct:
      return "bivariate-normal-product";
  }
  return "unknown";
}

const char* hypothesis_name(Hypothesis h) {
  return h == Hypothesis::WeakNull ? "weak-null" : "strong-null";
}

const char* stat_kind_name(StatKind s) {
  switch (s) {
    case StatKind::Unstudentized:
      return "plain";
    case StatKind::Studentized:
      return "studentized";
    case StatKind::CoefNorm:
      return "coef-norm";
    case StatKind::Wald:
      return "wald";
  }
  return "unknown";
}

const char* experiment_law_name(ExperimentLaw law) {
  return law == ExperimentLaw::SamplingLaw ? "sampling" : "permutation";
}

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;

// Unit-variance scale for sinh(3U), U ~ Unif[-2pi, 2pi].
double sinh_feature_scale() {
  return std::sqrt(std::sinh(12.0 * kPi) / (24.0 * kPi) - 0.5);
}

void check_correlation(double rho, const char* key) {
  if (!(rho > -1.0 && rho < 1.0))
    fail(ErrorCode::UsageError,
         std::string(key) + " must lie in (-1, 1)");
}

struct FeatureTriple {
  std::vector<double> t, s, z;
};

// (T, S) bivariate normal with the given correlation plus an independent Z.
FeatureTriple sample_normal_triple(int n, double corr, SplitMix64& g) {
  check_correlation(corr, "feature_corr");
  const double tail = std::sqrt(1.0 - corr * corr);
  FeatureTriple f;
  f.t.resize(static_cast<std::size_t>(n));
  f.s.resize(static_cast<std::size_t>(n));
  f.z.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double z1 = std_normal(g);
    const double z2 = std_normal(g);
    f.t[static_cast<std::size_t>(i)] = z1;
    f.s[static_cast<std::size_t>(i)] = corr * z1 + tail * z2;
    f.z[static_cast<std::size_t>(i)] = std_normal(g);
  }
  return f;
}

DyadMatrix pairwise_average(const std::vector<double>& f, double scale) {
  const int n = static_cast<int>(f.size());
  std::vector<double> cells(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double v = scale * (f[static_cast<std::size_t>(i)] +
                                f[static_cast<std::size_t>(j)]) *
                       kInvSqrt2;
      cells[static_cast<std::size_t>(i) * n + j] = v;
      cells[static_cast<std::size_t>(j) * n + i] = v;
    }
  return new_dyad_matrix(n, std::move(cells));
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> sample_features(
    const KernelSpec& spec, int n, std::uint64_t seed) {
  if (n < 3) fail(ErrorCode::TooSmall, "generators need n >= 3");
  SplitMix64 g = stream_rng(seed, "data", 0);
  std::vector<double> r(static_cast<std::size_t>(n));
  std::vector<double> s(static_cast<std::size_t>(n));
  switch (spec.feature_model) {
    case FeatureModel::CircleUV:
      for (int i = 0; i < n; ++i) {
        const double u = 2.0 * kPi * u01(g);
        r[static_cast<std::size_t>(i)] = std::numbers::sqrt2 * std::sin(u);
        s[static_cast<std::size_t>(i)] = std::numbers::sqrt2 * std::cos(u);
      }
      break;
    case FeatureModel::SinhCos: {
      const double scale = sinh_feature_scale();
      for (int i = 0; i < n; ++i) {
        const double u = 2.0 * kPi * (2.0 * u01(g) - 1.0);
        r[static_cast<std::size_t>(i)] = std::sinh(3.0 * u) / scale;
        s[static_cast<std::size_t>(i)] = std::numbers::sqrt2 * std::cos(u);
      }
      break;
    }
    case FeatureModel::IidBivariateNormal: {
      const double rho = spec.param("rho_rs", 0.0);
      check_correlation(rho, "rho_rs");
      const double tail = std::sqrt(1.0 - rho * rho);
      for (int i = 0; i < n; ++i) {
        const double z1 = std_normal(g);
        const double z2 = std_normal(g);
        r[static_cast<std::size_t>(i)] = z1;
        s[static_cast<std::size_t>(i)] = rho * z1 + tail * z2;
      }
      break;
    }
    case FeatureModel::BivariateNormalProduct: {
      const FeatureTriple f =
          sample_normal_triple(n, spec.param("feature_corr", 0.5), g);
      for (int i = 0; i < n; ++i) {
        r[static_cast<std::size_t>(i)] = f.t[static_cast<std::size_t>(i)] *
                                         f.z[static_cast<std::size_t>(i)];
        s[static_cast<std::size_t>(i)] = f.s[static_cast<std::size_t>(i)];
      }
      break;
    }
  }
  return {std::move(r), std::move(s)};
}

std::pair<DyadMatrix, DyadMatrix> generate_dyadic_pair(const KernelSpec& spec,
                                                       int n,
                                                       std::uint64_t seed) {
  if (spec.kind != KernelKind::PairwiseAverage)
    fail(ErrorCode::UnknownSpec,
         "custom kernels have no generator");
  auto [r, s] = sample_features(spec, n, seed);
  return {pairwise_average(r, 1.0), pairwise_average(s, 1.0)};
}

MrqapParams mrqap_params_from(const KernelSpec& spec) {
  MrqapParams p;
  p.theta0 = spec.param("theta0", p.theta0);
  p.theta1 = spec.param("theta1", p.theta1);
  p.rho_coef = spec.param("rho_coef", p.rho_coef);
  p.zeta_sd = spec.param("zeta_sd", p.zeta_sd);
  p.latent_noise = spec.param("latent_noise", p.latent_noise);
  p.feature_corr = spec.param("feature_corr", p.feature_corr);
  return p;
}

DyadDesign generate_mrqap_design(int n, const MrqapParams& params,
                                 std::uint64_t seed) {
  if (n < 3) fail(ErrorCode::TooSmall, "generators need n >= 3");
  if (!(params.zeta_sd >= 0.0))
    fail(ErrorCode::UsageError, "zeta_sd must be nonnegative");
  SplitMix64 g = stream_rng(seed, "data", 0);
  const FeatureTriple f = sample_normal_triple(n, params.feature_corr, g);
  std::vector<double> r(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    r[static_cast<std::size_t>(i)] =
        f.t[static_cast<std::size_t>(i)] * f.z[static_cast<std::size_t>(i)];

  const DyadMatrix b = pairwise_average(f.s, 1.0);
  const DyadMatrix c = pairwise_average(f.t, 1.0);
  const DyadMatrix eps = pairwise_average(r, params.latent_noise);

  std::vector<double> cells(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double zeta =
          params.zeta_sd > 0.0 ? params.zeta_sd * std_normal(g) : 0.0;
      const double v = params.theta0 + params.theta1 * b(i, j) +
                       params.rho_coef * c(i, j) + eps(i, j) + zeta;
      cells[static_cast<std::size_t>(i) * n + j] = v;
      cells[static_cast<std::size_t>(j) * n + i] = v;
    }
  return make_dyad_design(new_dyad_matrix(n, std::move(cells)), {b}, {c});
}

double ReferenceLaw::cdf(double x) const {
  if (kind == LawKind::Normal) return normal_cdf(x, mean, variance);
  return chi_square_cdf(x, df);
}

ReferenceLaw asymptotic_reference(const KernelSpec& spec, Hypothesis hyp,
                                  StatKind stat, int df) {
  if (spec.kind != KernelKind::PairwiseAverage)
    fail(ErrorCode::NoClosedForm,
         "custom kernels have no reference law");
  if (stat == StatKind::Studentized) return {LawKind::Normal, 0.0, 1.0, 1};
  if (stat == StatKind::Wald) {
    if (df < 1)
      fail(ErrorCode::UsageError, "wald reference needs df >= 1");
    return {LawKind::ChiSquare, 0.0, 1.0, df};
  }
  if (stat == StatKind::CoefNorm) {
    if (spec.feature_model != FeatureModel::BivariateNormalProduct)
      fail(ErrorCode::NoClosedForm,
           "plain coefficient law is pinned only for the "
           "regression design");
    if (hyp == Hypothesis::StrongNull)
      fail(ErrorCode::NoClosedForm,
           "permutation law of the plain coefficient depends "
           "on the strategy");
    const double corr = spec.param("feature_corr", 0.5);
    check_correlation(corr, "feature_corr");
    return {LawKind::Normal, 0.0, 1.0 / (1.0 - corr * corr), 1};
  }
  // plain pair statistic: permutation law has unit variance for every
  // unit-variance pairwise-average model; sampling law variance is E[(RS)^2]
  if (hyp == Hypothesis::StrongNull) return {LawKind::Normal, 0.0, 1.0, 1};
  switch (spec.feature_model) {
    case FeatureModel::CircleUV:
      return {LawKind::Normal, 0.0, 0.5, 1};
    case FeatureModel::SinhCos:
      return {LawKind::Normal, 0.0, 1.90, 1};
    case FeatureModel::IidBivariateNormal: {
      const double rho = spec.param("rho_rs", 0.0);
      if (rho != 0.0)
        fail(ErrorCode::NoClosedForm,
             "weak-null pair law needs uncorrelated features");
      return {LawKind::Normal, 0.0, 1.0, 1};
    }
    case FeatureModel::BivariateNormalProduct: {
      const double corr = spec.param("feature_corr", 0.5);
      check_correlation(corr, "feature_corr");
      return {LawKind::Normal, 0.0, 1.0 + 2.0 * corr * corr, 1};
    }
  }
  fail(ErrorCode::NoClosedForm, "unmapped feature model");
}

namespace {

template <class F>
double simpson(const F& f, double lo, double hi, int panels) {
  const double h = (hi - lo) / panels;
  double odd = 0.0, even = 0.0;
  for (int k = 1; k < panels; k += 2) odd += f(lo + k * h);
  for (int k = 2; k < panels; k += 2) even += f(lo + k * h);
  return h / 3.0 * (f(lo) + f(hi) + 4.0 * odd + 2.0 * even);
}

}  // namespace

double weak_null_variance_quadrature(const KernelSpec& spec) {
  const int panels = 200000;
  switch (spec.feature_model) {
    case FeatureModel::CircleUV: {
      const auto f = [](double u) {
        const double rs = 2.0 * std::sin(u) * std::cos(u);
        return rs * rs;
      };
      return simpson(f, 0.0, 2.0 * kPi, panels) / (2.0 * kPi);
    }
    case FeatureModel::SinhCos: {
      const double scale = sinh_feature_scale();
      const auto f = [scale](double u) {
        const double r = std::sinh(3.0 * u) / scale;
        const double s = std::numbers::sqrt2 * std::cos(u);
        return r * r * s * s;
      };
      return simpson(f, -2.0 * kPi, 2.0 * kPi, panels) / (4.0 * kPi);
    }
    default:
      fail(ErrorCode::NoClosedForm,
           "quadrature oracle covers the two settings driven "
           "by one uniform variable");
  }
}

double normal_cdf(double x, double mean, double variance) {
  if (!(variance > 0.0))
    fail(ErrorCode::UsageError, "normal cdf needs variance > 0");
  const double z = (x - mean) / std::sqrt(variance);
  return 0.5 * std::erfc(-z * kInvSqrt2);
}

double regularized_gamma_p(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0))
    fail(ErrorCode::UsageError,
         "incomplete gamma needs a > 0 and x >= 0");
  if (x == 0.0) return 0.0;
  const double lg = std::lgamma(a);
  const double prefix = std::exp(-x + a * std::log(x) - lg);
  if (x < a + 1.0) {
    // lower-tail series
    double term = 1.0 / a;
    double sum = term;
    for (int k = 1; k < 1000; ++k) {
      term *= x / (a + k);
      sum += term;
      if (std::abs(term) < std::abs(sum) * 1e-16) break;
    }
    return std::min(1.0, prefix * sum);
  }
  // upper-tail Lentz continued fraction
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 1000; ++i) {
    const double an = -static_cast<double>(i) * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return std::max(0.0, 1.0 - prefix * h);
}

double chi_square_cdf(double x, int df) {
  if (df < 1)
    fail(ErrorCode::UsageError, "chi-square cdf needs df >= 1");
  if (x <= 0.0) return 0.0;
  return regularized_gamma_p(0.5 * df, 0.5 * x);
}

double ks_distance(std::vector<double> samples, const ReferenceLaw& law) {
  if (samples.empty())
    fail(ErrorCode::EmptyReplicates, "ks needs samples");
  for (double x : samples)
    if (!std::isfinite(x))
      fail(ErrorCode::NonFiniteEntry, "ks sample not finite");
  std::sort(samples.begin(), samples.end());
  const double m = static_cast<double>(samples.size());
  double dist = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double cdf = law.cdf(samples[i]);
    dist = std::max(dist, cdf - static_cast<double>(i) / m);
    dist = std::max(dist, static_cast<double>(i + 1) / m - cdf);
  }
  return dist;
}

namespace {

QapStatistic qap_statistic_for(StatKind stat) {
  return stat == StatKind::Unstudentized ? QapStatistic::Unstudentized
                                         : QapStatistic::Studentized;
}

MrqapStatistic mrqap_statistic_for(StatKind stat) {
  return stat == StatKind::CoefNorm ? MrqapStatistic::CoefNorm
                                    : MrqapStatistic::Wald;
}

void validate_config(const ExperimentConfig& config, bool regression) {
  if (config.n < 3)
    fail(ErrorCode::UsageError, "experiment needs n >= 3");
  if (config.datasets < 1)
    fail(ErrorCode::UsageError, "experiment needs datasets >= 1");
  if (config.law == ExperimentLaw::PermutationLaw && config.inner_reps < 1)
    fail(ErrorCode::UsageError,
         "permutation-law experiments need inner_reps >= 1");
  if (config.inner_reps < 0)
    fail(ErrorCode::UsageError, "inner_reps must be nonnegative");
  for (double a : config.alphas)
    if (!(a > 0.0 && a < 1.0))
      fail(ErrorCode::UsageError,
           "rejection levels must lie in (0, 1)");
  if (regression &&
      config.spec.feature_model != FeatureModel::BivariateNormalProduct)
    fail(ErrorCode::UsageError,
         "regression statistics need the regression design "
         "generator (bivariate-normal-product)");
}

}  // namespace

ExperimentSummary run_experiment(const ExperimentConfig& config) {
  const bool regression = config.statistic == StatKind::CoefNorm ||
                          config.statistic == StatKind::Wald;
  validate_config(config, regression);
  const MrqapParams mp = mrqap_params_from(config.spec);

  ExperimentSummary summary;
  summary.n = config.n;
  summary.statistic = config.statistic;
  summary.law = config.law;
  summary.reference = asymptotic_reference(
      config.spec,
      config.law == ExperimentLaw::SamplingLaw ? Hypothesis::WeakNull
                                               : Hypothesis::StrongNull,
      config.statistic, 1);

  std::vector<double> pvals;
  if (config.law == ExperimentLaw::PermutationLaw) {
    const std::uint64_t ds = derive_seed(config.seed, "dataset", 0);
    PermutationReport rep;
    if (regression) {
      const DyadDesign d = generate_mrqap_design(config.n, mp, ds);
      rep = run_mrqap(d, config.strategy, mrqap_statistic_for(config.statistic),
                      config.inner_reps, ds, config.correction);
    } else {
      const auto [a, b] = generate_dyadic_pair(config.spec, config.n, ds);
      rep = run_qap(a, b, qap_statistic_for(config.statistic),
                    config.inner_reps, ds, config.correction);
    }
    summary.statistic_samples = std::move(rep.replicates);
  } else {
    const std::size_t count = static_cast<std::size_t>(config.datasets);
    summary.statistic_samples.resize(count);
    if (config.inner_reps > 0) pvals.resize(count);
    parallel_for(count, [&](std::size_t d) {
      const std::uint64_t ds =
          derive_seed(config.seed, "dataset", static_cast<std::uint64_t>(d));
      if (regression) {
        const DyadDesign design = generate_mrqap_design(config.n, mp, ds);
        if (config.inner_reps > 0) {
          const PermutationReport rep = run_mrqap(
              design, config.strategy, mrqap_statistic_for(config.statistic),
              config.inner_reps, ds, config.correction);
          summary.statistic_samples[d] = rep.observed;
          pvals[d] = rep.p_value;
        } else {
          const DyadFit fit = fit_dyadic_ols(design, config.correction);
          summary.statistic_samples[d] =
              config.statistic == StatKind::Wald
                  ? wald_statistic(fit, WaldScope::FocalBlock)
                  : std::sqrt(static_cast<double>(fit.n)) * fit.coef(0);
        }
      } else {
        const auto [a, b] = generate_dyadic_pair(config.spec, config.n, ds);
        if (config.inner_reps > 0) {
          const PermutationReport rep =
              run_qap(a, b, qap_statistic_for(config.statistic),
                      config.inner_reps, ds, config.correction);
          summary.statistic_samples[d] = rep.observed;
          pvals[d] = rep.p_value;
        } else {
          const UStatEstimates est = qap_estimates(a, b, config.correction);
          summary.statistic_samples[d] =
              config.statistic == StatKind::Unstudentized
                  ? unstudentized_statistic(est)
                  : studentized_statistic(est);
        }
      }
    });
  }

  summary.reps = static_cast<int>(summary.statistic_samples.size());
  summary.ks_distance = ks_distance(summary.statistic_samples,
                                    summary.reference);
  std::sort(summary.statistic_samples.begin(),
            summary.statistic_samples.end());
  const std::size_t m = summary.statistic_samples.size();
  summary.sample_mean =
      pairwise_sum(summary.statistic_samples) / static_cast<double>(m);
  if (m > 1) {
    const double mean = summary.sample_mean;
    summary.sample_variance =
        pairwise_sum(m,
                     [&](std::size_t i) {
                       const double d = summary.statistic_samples[i] - mean;
                       return d * d;
                     }) /
        static_cast<double>(m - 1);
  }
  for (double alpha : config.alphas) {
    if (pvals.empty()) break;
    std::size_t hits = 0;
    for (double p : pvals) hits += p <= alpha ? 1 : 0;
    summary.rejection_rate_at[alpha] =
        static_cast<double>(hits) / static_cast<double>(pvals.size());
  }
  return summary;
}

}  // namespace dyadperm
