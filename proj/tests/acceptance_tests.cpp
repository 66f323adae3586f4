#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dyadperm/cli_io.hpp"
#include "dyadperm/error.hpp"
#include "dyadperm/perm_engine.hpp"
#include "dyadperm/regress.hpp"
#include "dyadperm/rng.hpp"
#include "dyadperm/sim_lab.hpp"
#include "dyadperm/ustat.hpp"
#include "oracles.hpp"

using namespace dyadperm;
using nlohmann::ordered_json;

namespace {

// Each criterion prints exactly one PASS/FAIL summary line, independent of
// the doctest reporter, so a ctest log reads as a checklist.
class Verdict {
 public:
  explicit Verdict(std::string name) : name_(std::move(name)) {}

  ~Verdict() {
    std::string line =
        ok_ && std::uncaught_exceptions() == 0 ? "PASS " : "FAIL ";
    line += name_;
    if (!detail_.empty()) line += "  [" + detail_ + "]";
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
  }

  void expect(bool cond, const std::string& what) {
    CHECK_MESSAGE(cond, what);
    if (!cond) ok_ = false;
  }

  void note(const std::string& key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s=%.4g", key.c_str(), value);
    detail_ += detail_.empty() ? buf : std::string(" ") + buf;
  }

 private:
  std::string name_;
  std::string detail_;
  bool ok_ = true;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

KernelSpec spec_of(FeatureModel m) {
  KernelSpec spec;
  spec.feature_model = m;
  return spec;
}

ExperimentConfig pair_sampling_config(FeatureModel model, int n, int datasets,
                                      StatKind statistic, int inner_reps,
                                      std::uint64_t seed) {
  ExperimentConfig config;
  config.spec = spec_of(model);
  config.n = n;
  config.datasets = datasets;
  config.statistic = statistic;
  config.inner_reps = inner_reps;
  config.alphas = {0.05};
  config.seed = seed;
  return config;
}

ExperimentConfig regression_sampling_config(int n, int datasets,
                                            StatKind statistic,
                                            Strategy strategy, int inner_reps,
                                            std::uint64_t seed) {
  ExperimentConfig config;
  config.spec = spec_of(FeatureModel::BivariateNormalProduct);
  config.n = n;
  config.datasets = datasets;
  config.statistic = statistic;
  config.strategy = strategy;
  config.inner_reps = inner_reps;
  config.alphas = {0.05};
  config.seed = seed;
  return config;
}

std::filesystem::path scratch_dir() {
  const auto dir =
      std::filesystem::temp_directory_path() / "dyadperm_acceptance";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string cli_binary() {
  if (const char* p = std::getenv("DYADPERM_CLI")) return p;
  return "./dyadperm";
}

int run_process(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("acceptance") {

TEST_CASE("criterion 1: exact enumeration matches a brute-force oracle") {
  Verdict v("criterion 1: exact enumeration matches a brute-force oracle");
  const auto t0 = std::chrono::steady_clock::now();
  const auto perms = oracle::all_permutations(5);
  double worst = 0.0;
  for (int instance = 0; instance < 10; ++instance) {
    SplitMix64 g(1000 + static_cast<std::uint64_t>(instance));
    const DyadMatrix a = oracle::random_matrix(5, g);
    const DyadMatrix b = oracle::random_matrix(5, g);
    const PermutationReport rep =
        run_qap(a, b, QapStatistic::Unstudentized, 120,
                static_cast<std::uint64_t>(instance));
    v.expect(rep.mode == SamplingMode::ExactEnumeration,
             "n = 5 runs in exact mode");
    v.expect(rep.n_reps == 120, "all 120 permutations enumerated");

    std::vector<double> brute;
    brute.reserve(perms.size());
    for (const auto& pi : perms)
      brute.push_back(std::sqrt(5.0) *
                      oracle::qap_estimates(oracle::permuted_copy(a, pi), b,
                                            Eta1Correction::Plain)
                          .rho);
    std::vector<double> engine = rep.replicates;
    std::sort(engine.begin(), engine.end());
    std::sort(brute.begin(), brute.end());
    for (std::size_t k = 0; k < brute.size(); ++k)
      worst = std::max(worst, std::abs(engine[k] - brute[k]));
  }
  const double dt = seconds_since(t0);
  v.expect(worst < 1e-12, "replicate multisets agree to 1e-12");
  v.expect(dt < 5.0, "ten instances finish under five seconds");
  v.note("max_gap", worst);
  v.note("seconds", dt);
}

TEST_CASE("criterion 2: exact p-values are valid under feature independence") {
  Verdict v("criterion 2: exact p-values are valid under feature independence");
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig config = pair_sampling_config(
      FeatureModel::IidBivariateNormal, 5, 2000, StatKind::Studentized, 1, 23);
  config.spec.params["rho_rs"] = 0.0;
  config.alphas = {0.05, 0.10, 0.25};
  const ExperimentSummary summary = run_experiment(config);
  v.expect(summary.reps == 2000, "all 2000 datasets evaluated");
  for (double alpha : config.alphas) {
    const double rate = summary.rejection_rate_at.at(alpha);
    v.expect(rate <= alpha + 0.02,
             "rejection rate stays below alpha + 0.02");
    v.note("rate@" + std::to_string(alpha).substr(0, 4), rate);
  }
  const double dt = seconds_since(t0);
  v.expect(dt < 60.0, "finishes under one minute");
  v.note("seconds", dt);
}

TEST_CASE("criterion 3: studentization fixes the conservative setting") {
  Verdict v("criterion 3: studentization fixes the conservative setting");
  const ExperimentSummary plain =
      run_experiment(pair_sampling_config(FeatureModel::CircleUV, 200, 2000,
                                          StatKind::Unstudentized, 999, 2026));
  const ExperimentSummary stud =
      run_experiment(pair_sampling_config(FeatureModel::CircleUV, 200, 2000,
                                          StatKind::Studentized, 999, 2026));
  const double plain_rate = plain.rejection_rate_at.at(0.05);
  const double stud_rate = stud.rejection_rate_at.at(0.05);
  v.expect(plain_rate < 0.035, "plain statistic under-rejects");
  v.expect(stud_rate >= 0.035 && stud_rate <= 0.065,
           "studentized statistic holds the nominal level");
  v.note("plain", plain_rate);
  v.note("studentized", stud_rate);
}

TEST_CASE("criterion 4: studentization fixes the anti-conservative setting") {
  Verdict v("criterion 4: studentization fixes the anti-conservative setting");
  const ExperimentSummary plain =
      run_experiment(pair_sampling_config(FeatureModel::SinhCos, 200, 2000,
                                          StatKind::Unstudentized, 999, 2026));
  const ExperimentSummary stud =
      run_experiment(pair_sampling_config(FeatureModel::SinhCos, 200, 2000,
                                          StatKind::Studentized, 999, 2026));
  const double plain_rate = plain.rejection_rate_at.at(0.05);
  const double stud_rate = stud.rejection_rate_at.at(0.05);
  v.expect(plain_rate > 0.065, "plain statistic over-rejects");
  v.expect(stud_rate >= 0.035 && stud_rate <= 0.065,
           "studentized statistic holds the nominal level");
  v.note("plain", plain_rate);
  v.note("studentized", stud_rate);
}

TEST_CASE("criterion 5: sampling variance hits the closed-form targets") {
  Verdict v("criterion 5: sampling variance hits the closed-form targets");
  ExperimentConfig circle = pair_sampling_config(
      FeatureModel::CircleUV, 400, 2000, StatKind::Unstudentized, 0, 55);
  const ExperimentSummary s1 = run_experiment(circle);
  v.expect(s1.reference.variance == 0.5, "setting-one limit variance is 1/2");
  v.expect(std::abs(s1.sample_variance - 0.5) <= 0.05,
           "setting-one sample variance within 0.05 of 1/2");

  ExperimentConfig sinh_cfg = pair_sampling_config(
      FeatureModel::SinhCos, 400, 2000, StatKind::Unstudentized, 0, 202);
  const ExperimentSummary s2 = run_experiment(sinh_cfg);
  v.expect(s2.reference.variance == 1.90,
           "setting-two limit variance is pinned at 1.90");
  v.expect(std::abs(s2.sample_variance - 1.90) <= 0.15,
           "setting-two sample variance within 0.15 of 1.90");

  const double q2 = weak_null_variance_quadrature(sinh_cfg.spec);
  const double q1 = weak_null_variance_quadrature(circle.spec);
  v.expect(std::abs(q2 - 1.90) < 0.02,
           "quadrature oracle confirms the 1.90 constant");
  v.expect(std::abs(q1 - 0.5) < 0.02,
           "quadrature oracle confirms the 1/2 constant");
  v.note("var1", s1.sample_variance);
  v.note("var2", s2.sample_variance);
  v.note("quad2", q2);
}

TEST_CASE("criterion 6: studentized statistic matches its normal limit") {
  Verdict v("criterion 6: studentized statistic matches its normal limit");
  const ExperimentSummary sampling =
      run_experiment(pair_sampling_config(FeatureModel::CircleUV, 200, 2000,
                                          StatKind::Studentized, 0, 66));
  v.expect(sampling.reference.kind == LawKind::Normal &&
               sampling.reference.mean == 0.0 &&
               sampling.reference.variance == 1.0,
           "sampling reference is the standard normal");
  v.expect(sampling.ks_distance < 0.05,
           "sampling draws are within 0.05 KS of N(0,1)");

  ExperimentConfig perm = pair_sampling_config(
      FeatureModel::CircleUV, 200, 1, StatKind::Studentized, 5000, 66);
  perm.law = ExperimentLaw::PermutationLaw;
  const ExperimentSummary permutation = run_experiment(perm);
  v.expect(permutation.reps == 5000, "5000 permutation replicates");
  v.expect(permutation.ks_distance < 0.05,
           "permutation replicates are within 0.05 KS of N(0,1)");
  v.note("ks_sampling", sampling.ks_distance);
  v.note("ks_permutation", permutation.ks_distance);
}

TEST_CASE("criterion 7: sandwich variance equals the rescaled cluster form") {
  Verdict v("criterion 7: sandwich variance equals the rescaled cluster form");
  const int sizes[] = {8, 12, 20};
  const int shapes[][2] = {{1, 0}, {1, 1}, {1, 2}, {2, 0}, {2, 1}, {3, 0}};
  SplitMix64 g(4007);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const int n = sizes[k % 3];
    const int p = shapes[k % 6][0], q = shapes[k % 6][1];
    std::vector<DyadMatrix> focal, nuisance;
    for (int j = 0; j < p; ++j) focal.push_back(oracle::random_matrix(n, g));
    for (int j = 0; j < q; ++j)
      nuisance.push_back(oracle::random_matrix(n, g));
    const DyadDesign d = make_dyad_design(oracle::random_matrix(n, g),
                                          std::move(focal),
                                          std::move(nuisance));
    const DyadFit fit = fit_dyadic_ols(d, Eta1Correction::Sen);
    const Eigen::MatrixXd lz = cluster_robust_variance(d, fit);
    const double nn = static_cast<double>(n);
    const double factor =
        4.0 * nn * nn * (nn - 1.0) / ((nn - 2.0) * (nn - 4.0));
    const Eigen::MatrixXd rescaled =
        factor * lz.bottomRightCorner(p + q, p + q);
    const double gap = (rescaled - fit.v_hat).cwiseAbs().maxCoeff() /
                       fit.v_hat.cwiseAbs().maxCoeff();
    worst = std::max(worst, gap);
  }
  v.expect(worst < 1e-9, "slope blocks agree to 1e-9 relative on 20 designs");
  v.note("max_gap", worst);
}

TEST_CASE("criterion 8: focal-permutation Wald is calibrated where the plain "
          "coefficient is not") {
  Verdict v(
      "criterion 8: focal-permutation Wald is calibrated where the plain "
      "coefficient is not");
  ExperimentConfig perm = regression_sampling_config(
      150, 1, StatKind::Wald, Strategy::PermuteFocal, 5000, 44);
  perm.law = ExperimentLaw::PermutationLaw;
  const ExperimentSummary chi = run_experiment(perm);
  v.expect(chi.reference.kind == LawKind::ChiSquare && chi.reference.df == 1,
           "permutation reference is chi-square with one degree of freedom");
  v.expect(chi.ks_distance < 0.05,
           "Wald replicates are within 0.05 KS of chi-square(1)");

  const ExperimentSummary coef = run_experiment(regression_sampling_config(
      150, 2000, StatKind::CoefNorm, Strategy::PermuteFocal, 499, 88));
  const ExperimentSummary wald = run_experiment(regression_sampling_config(
      150, 2000, StatKind::Wald, Strategy::PermuteFocal, 499, 88));
  const double coef_rate = coef.rejection_rate_at.at(0.05);
  const double wald_rate = wald.rejection_rate_at.at(0.05);
  v.expect(coef_rate < 0.035 || coef_rate > 0.065,
           "plain coefficient test misses the nominal level");
  v.expect(wald_rate >= 0.035 && wald_rate <= 0.065,
           "Wald test holds the nominal level");
  v.note("ks", chi.ks_distance);
  v.note("coef", coef_rate);
  v.note("wald", wald_rate);
}

TEST_CASE("criterion 9: strategies are exact under the strong null and only "
          "Wald holds the weak-null level") {
  Verdict v(
      "criterion 9: strategies are exact under the strong null and only "
      "Wald holds the weak-null level");
  ExperimentConfig exact = regression_sampling_config(
      5, 2000, StatKind::Wald, Strategy::PermuteFocal, 1, 33);
  exact.spec.params["feature_corr"] = 0.0;
  exact.alphas = {0.05, 0.10, 0.25};
  const ExperimentSummary strong = run_experiment(exact);
  for (double alpha : exact.alphas)
    v.expect(strong.rejection_rate_at.at(alpha) <= alpha + 0.02,
             "focal permutation is exactly valid under the strong null");

  const Strategy strategies[] = {
      Strategy::PermuteOutcome, Strategy::PermuteFocal,
      Strategy::PermuteResidualFocal, Strategy::PermuteResidualOutcome};
  for (Strategy strategy : strategies) {
    const ExperimentSummary s = run_experiment(regression_sampling_config(
        150, 2000, StatKind::Wald, strategy, 399, 77));
    const double rate = s.rejection_rate_at.at(0.05);
    v.expect(rate >= 0.03 && rate <= 0.07,
             std::string("Wald holds the level under ") +
                 strategy_name(strategy));
    v.note(strategy_name(strategy), rate);
  }

  int outside = 0;
  for (Strategy strategy :
       {Strategy::PermuteOutcome, Strategy::PermuteFocal}) {
    const ExperimentSummary s = run_experiment(regression_sampling_config(
        150, 2000, StatKind::CoefNorm, strategy, 399, 77));
    const double rate = s.rejection_rate_at.at(0.05);
    if (rate < 0.03 || rate > 0.07) ++outside;
    v.note(std::string("coef_") + strategy_name(strategy), rate);
  }
  v.expect(outside >= 1,
           "at least one plain-coefficient strategy misses the level");
}

TEST_CASE("criterion 10: reports are byte-identical and thread-count "
          "independent") {
  Verdict v(
      "criterion 10: reports are byte-identical and thread-count independent");
  const std::string cli = cli_binary();
  const auto dir = scratch_dir();

  // synthetic data with the case-study shape: one outcome, two focal and
  // four nuisance networks over 73 units
  const int n = 73;
  SplitMix64 g(730);
  const DyadMatrix f1 = oracle::random_matrix(n, g);
  const DyadMatrix f2 = oracle::random_matrix(n, g);
  std::vector<DyadMatrix> nuis;
  for (int k = 0; k < 4; ++k) nuis.push_back(oracle::random_matrix(n, g));
  const DyadMatrix noise = oracle::random_matrix(n, g);
  std::vector<double> cells(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j)
        cells[static_cast<std::size_t>(i) * n + j] =
            0.4 * f1(i, j) - 0.3 * f2(i, j) + 0.2 * nuis[0](i, j) +
            noise(i, j);
  const DyadMatrix outcome = new_dyad_matrix(n, std::move(cells));

  const auto path_of = [&](const std::string& name, const DyadMatrix& m) {
    const std::string p = (dir / name).string();
    write_matrix_csv(p, m, {});
    return p;
  };
  const std::string a_path = path_of("outcome.csv", outcome);
  const std::string f1_path = path_of("advice.csv", f1);
  const std::string f2_path = path_of("trust.csv", f2);
  std::vector<std::string> c_paths;
  for (int k = 0; k < 4; ++k)
    c_paths.push_back(path_of("context" + std::to_string(k + 1) + ".csv",
                              nuis[static_cast<std::size_t>(k)]));

  const std::string mrqap_cmd =
      cli + " mrqap --a '" + a_path + "' --b '" + f1_path + "' --b '" +
      f2_path + "' --c '" + c_paths[0] + "' --c '" + c_paths[1] + "' --c '" +
      c_paths[2] + "' --c '" + c_paths[3] + "' --reps 199 --seed 12 --out '";
  const std::string r1 = (dir / "m1.json").string();
  const std::string r2 = (dir / "m2.json").string();
  const std::string rt1 = (dir / "mt1.json").string();
  const std::string rt3 = (dir / "mt3.json").string();
  v.expect(run_process(mrqap_cmd + r1 + "'") == 0, "mrqap run succeeds");
  v.expect(run_process(mrqap_cmd + r2 + "'") == 0, "mrqap rerun succeeds");
  v.expect(run_process("DYADPERM_THREADS=1 " + mrqap_cmd + rt1 + "'") == 0,
           "single-thread mrqap run succeeds");
  v.expect(run_process("DYADPERM_THREADS=3 " + mrqap_cmd + rt3 + "'") == 0,
           "three-thread mrqap run succeeds");
  const std::string baseline = slurp(r1);
  v.expect(!baseline.empty(), "report is nonempty");
  v.expect(slurp(r2) == baseline, "identical rerun is byte-identical");
  v.expect(slurp(rt1) == baseline, "one worker yields the same bytes");
  v.expect(slurp(rt3) == baseline, "three workers yield the same bytes");

  const ordered_json report = ordered_json::parse(baseline);
  v.expect(report["result"]["fit"]["coefficients"].size() == 6,
           "six coefficients reported");
  v.expect(report["result"]["fit"]["coefficients"][0]["name"] == "advice",
           "coefficients are named after the input files");
  v.expect(report["result"]["permutation"]["n_reps"] == 199,
           "monte carlo budget respected");

  const std::string fit_out = (dir / "fit.json").string();
  v.expect(run_process(cli + " fit --a '" + a_path + "' --b '" + f1_path +
                       "' --b '" + f2_path + "' --c '" + c_paths[0] +
                       "' --c '" + c_paths[1] + "' --c '" + c_paths[2] +
                       "' --c '" + c_paths[3] + "' --out '" + fit_out +
                       "'") == 0,
           "fit run succeeds");
  const ordered_json fit_report = ordered_json::parse(slurp(fit_out));
  v.expect(fit_report["result"]["fit"]["n"] == 73, "fit sees all 73 units");
  v.expect(
      fit_report["result"]["cluster_identity"]["max_relative_gap"]
          .get<double>() < 1e-9,
      "cluster identity verified inside the fit report");

  const std::string q1 = (dir / "q1.json").string();
  const std::string q2 = (dir / "q2.json").string();
  const std::string qap_cmd = cli + " qap --a '" + a_path + "' --b '" +
                              f1_path + "' --reps 299 --seed 4 --out '";
  v.expect(run_process(qap_cmd + q1 + "'") == 0, "qap run succeeds");
  v.expect(run_process(qap_cmd + q2 + "'") == 0, "qap rerun succeeds");
  v.expect(slurp(q1) == slurp(q2), "qap reports are byte-identical");

  const std::string config_path = (dir / "exp.json").string();
  {
    std::ofstream cf(config_path, std::ios::binary);
    cf << "{\"spec\": \"circle-uv\", \"n\": 20, \"datasets\": 10, "
          "\"statistic\": \"plain\", \"seed\": 3}\n";
  }
  const std::string sim_out = (dir / "sim.json").string();
  v.expect(run_process(cli + " simulate --config '" + config_path +
                       "' --out '" + sim_out + "'") == 0,
           "simulate run succeeds");
  v.expect(ordered_json::parse(slurp(sim_out))["result"]["reps"] == 10,
           "simulate report counts its datasets");

  v.expect(run_process(cli + " version > /dev/null") == 0,
           "version run succeeds");

  // replicate values are identical under different in-process worker counts
  setenv("DYADPERM_THREADS", "1", 1);
  const DyadDesign d =
      make_dyad_design(outcome, {f1, f2}, {nuis[0], nuis[1]});
  const PermutationReport one =
      run_mrqap(d, Strategy::PermuteFocal, MrqapStatistic::Wald, 99, 21);
  setenv("DYADPERM_THREADS", "3", 1);
  const PermutationReport three =
      run_mrqap(d, Strategy::PermuteFocal, MrqapStatistic::Wald, 99, 21);
  unsetenv("DYADPERM_THREADS");
  v.expect(one.replicates == three.replicates,
           "replicate values do not depend on the worker count");
}

}  // TEST_SUITE
