#include "dyadperm/dyad_matrix.hpp"

#include <cmath>
#include <string>

#include "dyadperm/summation.hpp"

namespace dyadperm {

DyadMatrix new_dyad_matrix(int n, std::vector<double> row_major) {
  if (n < 3) {
    fail(ErrorCode::TooSmall,
         "dyadic matrix needs n >= 3, got n = " + std::to_string(n));
  }
  const auto nn = static_cast<std::size_t>(n) * static_cast<std::size_t>(n);
  if (row_major.size() != nn) {
    fail(ErrorCode::NotSquare,
         "expected " + std::to_string(nn) + " values for n = " +
             std::to_string(n) + ", got " + std::to_string(row_major.size()));
  }

  double max_abs = 0.0;
  for (double v : row_major) {
    if (!std::isfinite(v)) {
      fail(ErrorCode::NonFiniteEntry, "matrix contains a NaN or Inf entry");
    }
    max_abs = std::max(max_abs, std::abs(v));
  }

  const double sym_tol = 1e-9 * max_abs;
  for (int i = 0; i < n; ++i) {
    const std::size_t row = static_cast<std::size_t>(i) * n;
    if (row_major[row + i] != 0.0) {
      fail(ErrorCode::NonzeroDiagonal,
           "diagonal entry (" + std::to_string(i + 1) + "," +
               std::to_string(i + 1) + ") must be zero");
    }
    for (int j = i + 1; j < n; ++j) {
      const std::size_t rc = row + j;
      const std::size_t cr = static_cast<std::size_t>(j) * n + i;
      if (std::abs(row_major[rc] - row_major[cr]) > sym_tol) {
        fail(ErrorCode::AsymmetricBeyondTolerance,
             "entries (" + std::to_string(i + 1) + "," + std::to_string(j + 1) +
                 ") and transpose differ beyond tolerance");
      }
      const double s = 0.5 * (row_major[rc] + row_major[cr]);
      row_major[rc] = s;
      row_major[cr] = s;
    }
  }
  return DyadMatrix(n, std::move(row_major));
}

DyadMatrix new_dyad_matrix(const std::vector<std::vector<double>>& rows) {
  const int n = static_cast<int>(rows.size());
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(n) * n);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != n) {
      fail(ErrorCode::NotSquare, "row length does not match row count");
    }
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return new_dyad_matrix(n, std::move(flat));
}

double off_diagonal_mean(const DyadMatrix& m) {
  const int n = m.n();
  const double* a = m.data();
  // The diagonal is structurally zero, so summing whole rows is the same sum.
  const double total = pairwise_sum(n, [&](std::size_t i) {
    return pairwise_sum(n, [&](std::size_t j) { return a[i * n + j]; });
  });
  return total / (static_cast<double>(n) * (n - 1));
}

namespace {
double abs_int_pow(double x, int k) {
  double b = std::abs(x);
  double r = 1.0;
  for (int e = k; e > 0; e >>= 1) {
    if (e & 1) r *= b;
    b *= b;
  }
  return r;
}
}  // namespace

double DyadStats::row_moment(int k) const {
  return pairwise_sum(row_means.size(), [&](std::size_t i) {
           return abs_int_pow(row_means[i], k);
         }) /
         static_cast<double>(n);
}

double DyadStats::dyad_moment(int k) const {
  const auto nu = static_cast<std::size_t>(n);
  const double total = pairwise_sum(nu, [&](std::size_t i) {
    return pairwise_sum(nu, [&](std::size_t j) {
      if (i == j) return 0.0;
      return abs_int_pow(double_demeaned[i * nu + j], k);
    });
  });
  return total / (static_cast<double>(n) * (n - 1));
}

DyadStats dyad_stats(const DyadMatrix& m) {
  const int n = m.n();
  const auto nu = static_cast<std::size_t>(n);
  const double* a = m.data();

  DyadStats s;
  s.n = n;
  s.grand_mean = off_diagonal_mean(m);

  s.row_means.resize(nu);
  for (int i = 0; i < n; ++i) {
    const double row = pairwise_sum(nu, [&](std::size_t j) {
      if (j == static_cast<std::size_t>(i)) return 0.0;
      return a[i * nu + j] - s.grand_mean;
    });
    s.row_means[i] = row / (n - 2);
  }

  s.double_demeaned.assign(nu * nu, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      s.double_demeaned[i * nu + j] =
          a[i * nu + j] - s.row_means[i] - s.row_means[j] - s.grand_mean;
    }
  }

  s.m12 = s.row_moment(2);
  s.m14 = s.row_moment(4);
  s.m22 = s.dyad_moment(2);
  s.m24 = s.dyad_moment(4);
  return s;
}

void validate_permutation(const std::vector<int>& pi, int n) {
  if (static_cast<int>(pi.size()) != n) {
    fail(ErrorCode::PermutationLengthMismatch,
         "permutation has length " + std::to_string(pi.size()) +
             ", matrix has n = " + std::to_string(n));
  }
  std::vector<char> seen(n, 0);
  for (int v : pi) {
    if (v < 0 || v >= n || seen[v]) {
      fail(ErrorCode::NotBijection,
           "permutation is not a bijection on {1.." + std::to_string(n) + "}");
    }
    seen[v] = 1;
  }
}

DyadMatrix apply_double_permutation(const DyadMatrix& m,
                                    const std::vector<int>& pi) {
  const int n = m.n();
  validate_permutation(pi, n);
  const auto nu = static_cast<std::size_t>(n);
  const double* a = m.data();
  std::vector<double> out(nu * nu);
  for (int i = 0; i < n; ++i) {
    const std::size_t src_row = static_cast<std::size_t>(pi[i]) * nu;
    for (int j = 0; j < n; ++j) {
      out[i * nu + j] = a[src_row + pi[j]];
    }
  }
  return new_dyad_matrix(n, std::move(out));
}

}  // namespace dyadperm
