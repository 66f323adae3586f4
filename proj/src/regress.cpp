#include "dyadperm/regress.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "dyadperm/error.hpp"
#include "dyadperm/linalg.hpp"
#include "dyadperm/summation.hpp"

namespace dyadperm {

namespace {

// Regressor stack in coefficient order (focal first), with grand means.
struct Stack {
  int n = 0;
  std::vector<const DyadMatrix*> x;
  std::vector<double> mean;
};

Stack make_stack(const DyadDesign& d) {
  if (d.outcome.n() < 3)
    fail(ErrorCode::TooSmall, "design outcome has fewer than 3 nodes");
  if (d.p() < 1)
    fail(ErrorCode::DimensionMismatch, "design needs at least one focal matrix");
  Stack s;
  s.n = d.outcome.n();
  for (const auto& m : d.focal) s.x.push_back(&m);
  for (const auto& m : d.nuisance) s.x.push_back(&m);
  for (const DyadMatrix* m : s.x) {
    if (m->n() != s.n)
      fail(ErrorCode::DimensionMismatch, "design matrices disagree on n");
    s.mean.push_back(off_diagonal_mean(*m));
  }
  return s;
}

// sum_{i!=j} (x_ij - xbar)(y_ij - ybar), pairwise within and across rows
double centered_cross(const DyadMatrix& x, double xbar, const DyadMatrix& y,
                      double ybar) {
  const int n = x.n();
  return pairwise_sum(static_cast<std::size_t>(n), [&](std::size_t i) {
    return pairwise_sum(static_cast<std::size_t>(n), [&](std::size_t j) {
      if (i == j) return 0.0;
      const int ii = static_cast<int>(i), jj = static_cast<int>(j);
      return (x(ii, jj) - xbar) * (y(ii, jj) - ybar);
    });
  });
}

}  // namespace

DyadDesign make_dyad_design(DyadMatrix outcome, std::vector<DyadMatrix> focal,
                            std::vector<DyadMatrix> nuisance) {
  DyadDesign d{std::move(outcome), std::move(focal), std::move(nuisance)};
  make_stack(d);
  return d;
}

Eigen::MatrixXd DyadFit::selection() const {
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(p + q, p);
  f.topLeftCorner(p, p).setIdentity();
  return f;
}

DyadFit fit_dyadic_ols(const DyadDesign& d, Eta1Correction correction) {
  const Stack s = make_stack(d);
  const int n = s.n;
  const int k = static_cast<int>(s.x.size());
  const Eta1Correction resolved = resolve_eta1_correction(correction, n);
  const double abar = off_diagonal_mean(d.outcome);
  const double pairs = static_cast<double>(n) * (n - 1);

  Eigen::MatrixXd sigma(k, k);
  Eigen::VectorXd sigma_a(k);
  for (int r = 0; r < k; ++r) {
    sigma_a(r) = centered_cross(*s.x[r], s.mean[r], d.outcome, abar) / pairs;
    for (int c = r; c < k; ++c) {
      const double v =
          centered_cross(*s.x[r], s.mean[r], *s.x[c], s.mean[c]) / pairs;
      sigma(r, c) = v;
      sigma(c, r) = v;
    }
  }

  const Eigen::MatrixXd sigma_inv =
      spd_inverse(sigma, ErrorCode::SingularDesign, "regressor covariance");
  const Eigen::VectorXd w = sigma_inv * sigma_a;

  DyadFit f;
  f.n = n;
  f.p = d.p();
  f.q = d.q();
  f.correction = resolved;
  f.coef = w;
  f.sigma_hat = sigma;
  f.intercept = abar;
  for (int r = 0; r < k; ++r) f.intercept -= w(r) * s.mean[r];

  f.residuals.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      double e = d.outcome(i, j) - abar;
      for (int r = 0; r < k; ++r)
        e -= w(r) * ((*s.x[r])(i, j) - s.mean[r]);
      f.residuals[static_cast<std::size_t>(i) * n + j] = e;
    }
  }

  // phi1_i = (n-1)^-1 sum_{j!=i} e_ij (x_ij - xbar), one row per node
  Eigen::MatrixXd phis(n, k);
  for (int i = 0; i < n; ++i) {
    for (int r = 0; r < k; ++r) {
      const DyadMatrix& x = *s.x[r];
      const double xbar = s.mean[r];
      phis(i, r) = pairwise_sum(static_cast<std::size_t>(n), [&](std::size_t j) {
        const int jj = static_cast<int>(j);
        if (jj == i) return 0.0;
        return f.residuals[static_cast<std::size_t>(i) * n + jj] *
               (x(i, jj) - xbar);
      }) / (n - 1);
    }
  }

  const double factor = eta1_outer_factor(resolved, n);
  Eigen::MatrixXd h(k, k);
  for (int r = 0; r < k; ++r) {
    for (int c = r; c < k; ++c) {
      const double v =
          factor * pairwise_sum(static_cast<std::size_t>(n), [&](std::size_t i) {
            return phis(static_cast<Eigen::Index>(i), r) *
                   phis(static_cast<Eigen::Index>(i), c);
          });
      h(r, c) = v;
      h(c, r) = v;
    }
  }
  f.h1_phi_hat = h;

  const Eigen::MatrixXd v = 4.0 * sigma_inv * h * sigma_inv;
  f.v_hat = 0.5 * (v + v.transpose());
  return f;
}

Eigen::MatrixXd cluster_robust_variance(const DyadDesign& d, const DyadFit& f) {
  const Stack s = make_stack(d);
  const int n = s.n;
  const int k = static_cast<int>(s.x.size());
  const int m = k + 1;
  if (f.n != n || f.p != d.p() || f.q != d.q())
    fail(ErrorCode::DimensionMismatch, "fit does not match design");

  const double abar = off_diagonal_mean(d.outcome);
  // Diagonal-filled reads: cell (i,i) carries the off-diagonal mean, so the
  // g-th column is a complete n-observation cluster.
  const auto cell = [](const DyadMatrix& x, double bar, int i, int j) {
    return i == j ? bar : x(i, j);
  };
  const auto reg = [&](int r, int i, int j) {
    return r == 0 ? 1.0 : cell(*s.x[r - 1], s.mean[r - 1], i, j);
  };
  const std::size_t cells = static_cast<std::size_t>(n) * n;

  // Pooled least squares on the n^2 filled cells, solved from its own raw
  // normal equations rather than the centered sigma blocks in fit_dyadic_ols.
  Eigen::MatrixXd xtx(m, m);
  Eigen::VectorXd xty(m);
  for (int r = 0; r < m; ++r) {
    xty(r) = pairwise_sum(cells, [&](std::size_t c) {
      const int i = static_cast<int>(c / n), j = static_cast<int>(c % n);
      return reg(r, i, j) * cell(d.outcome, abar, i, j);
    });
    for (int c2 = r; c2 < m; ++c2) {
      const double v = pairwise_sum(cells, [&](std::size_t c) {
        const int i = static_cast<int>(c / n), j = static_cast<int>(c % n);
        return reg(r, i, j) * reg(c2, i, j);
      });
      xtx(r, c2) = v;
      xtx(c2, r) = v;
    }
  }
  const Eigen::MatrixXd bread_inv =
      spd_inverse(xtx, ErrorCode::SingularDesign, "cluster design gram");
  const Eigen::VectorXd beta = bread_inv * xty;

  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(m, m);
  for (int g = 0; g < n; ++g) {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(m);
    for (int j = 0; j < n; ++j) {
      double e = cell(d.outcome, abar, j, g);
      for (int r = 0; r < m; ++r) e -= beta(r) * reg(r, j, g);
      for (int r = 0; r < m; ++r) u(r) += reg(r, j, g) * e;
    }
    meat += u * u.transpose();
  }

  const Eigen::MatrixXd v = bread_inv * meat * bread_inv;
  return 0.5 * (v + v.transpose());
}

double wald_statistic(const DyadFit& f, WaldScope scope) {
  Eigen::VectorXd w;
  Eigen::MatrixXd v;
  if (scope == WaldScope::FocalBlock) {
    w = f.coef.head(f.p);
    v = f.v_hat.topLeftCorner(f.p, f.p);
  } else {
    w = f.coef;
    v = f.v_hat;
  }
  const Eigen::MatrixXd vinv =
      spd_inverse(v, ErrorCode::SingularVariance, "wald variance block");
  return static_cast<double>(f.n) * w.dot(vinv * w);
}

std::vector<DyadMatrix> residualize(const std::vector<DyadMatrix>& targets,
                                    const std::vector<DyadMatrix>& controls) {
  if (targets.empty()) return {};
  const int n = targets.front().n();
  if (n < 3) fail(ErrorCode::TooSmall, "residualize target has fewer than 3 nodes");
  for (const auto& t : targets)
    if (t.n() != n)
      fail(ErrorCode::DimensionMismatch, "residualize targets disagree on n");
  const int q = static_cast<int>(controls.size());
  std::vector<double> cbar(q);
  for (int l = 0; l < q; ++l) {
    if (controls[l].n() != n)
      fail(ErrorCode::DimensionMismatch, "residualize controls disagree on n");
    cbar[l] = off_diagonal_mean(controls[l]);
  }

  const double pairs = static_cast<double>(n) * (n - 1);
  Eigen::MatrixXd cc_inv;
  if (q > 0) {
    Eigen::MatrixXd cc(q, q);
    for (int r = 0; r < q; ++r)
      for (int c = r; c < q; ++c) {
        const double v =
            centered_cross(controls[r], cbar[r], controls[c], cbar[c]) / pairs;
        cc(r, c) = v;
        cc(c, r) = v;
      }
    cc_inv = spd_inverse(cc, ErrorCode::SingularDesign, "control covariance");
  }

  std::vector<DyadMatrix> out;
  out.reserve(targets.size());
  for (const auto& t : targets) {
    const double tbar = off_diagonal_mean(t);
    Eigen::VectorXd gamma;
    if (q > 0) {
      Eigen::VectorXd ct(q);
      for (int l = 0; l < q; ++l)
        ct(l) = centered_cross(controls[l], cbar[l], t, tbar) / pairs;
      gamma = cc_inv * ct;
    }
    std::vector<double> vals(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        double e = t(i, j) - tbar;
        for (int l = 0; l < q; ++l) e -= gamma(l) * (controls[l](i, j) - cbar[l]);
        vals[static_cast<std::size_t>(i) * n + j] = e;
      }
    out.push_back(new_dyad_matrix(n, std::move(vals)));
  }
  return out;
}

}  // namespace dyadperm
