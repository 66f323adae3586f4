#pragma once

#include <cstddef>
#include <vector>

#include "dyadperm/error.hpp"

namespace dyadperm {

class DyadMatrix;
DyadMatrix new_dyad_matrix(int n, std::vector<double> row_major);

// Symmetric n x n dyadic measurement matrix with a structurally zero diagonal.
// Construction goes through new_dyad_matrix, which validates and symmetrizes,
// so downstream math can assume exact symmetry and finiteness. Storage is
// dense row major: the permutation hot loops index a[pi[i]*n + pi[j]] and a
// packed triangle would make that lookup branch.
class DyadMatrix {
 public:
  DyadMatrix() = default;

  int n() const { return n_; }
  double operator()(int i, int j) const { return v_[idx(i, j)]; }
  const double* data() const { return v_.data(); }
  const std::vector<double>& values() const { return v_; }

 private:
  friend DyadMatrix new_dyad_matrix(int n, std::vector<double> row_major);
  DyadMatrix(int n, std::vector<double> v) : n_(n), v_(std::move(v)) {}
  std::size_t idx(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + j;
  }

  int n_ = 0;
  std::vector<double> v_;
};

// Validates and builds a DyadMatrix from row-major values:
//   - n >= 3 and values.size() == n*n,
//   - all entries finite,
//   - zero diagonal,
//   - |a_ij - a_ji| <= 1e-9 * max|a|, after which entries are symmetrized to
//     (a_ij + a_ji)/2 so later code sees exact symmetry.
DyadMatrix new_dyad_matrix(int n, std::vector<double> row_major);
DyadMatrix new_dyad_matrix(const std::vector<std::vector<double>>& rows);

// abar = {n(n-1)}^-1 sum_{i!=j} a_ij.
double off_diagonal_mean(const DyadMatrix& m);

// Derived centering quantities and moments of one matrix:
//   row_means[i]        abar_i   = (n-2)^-1 sum_{j!=i} (a_ij - abar)
//   double_demeaned     atilde_ij = a_ij - abar_i - abar_j - abar (zero diag)
//   m1k = n^-1 sum_i |abar_i|^k
//   m2k = {n(n-1)}^-1 sum_{i!=j} |atilde_ij|^k
// k = 2 and k = 4 are precomputed; other orders via the accessors.
struct DyadStats {
  int n = 0;
  double grand_mean = 0.0;
  std::vector<double> row_means;
  std::vector<double> double_demeaned;
  double m12 = 0.0, m14 = 0.0, m22 = 0.0, m24 = 0.0;

  double row_moment(int k) const;
  double dyad_moment(int k) const;
};

DyadStats dyad_stats(const DyadMatrix& m);

// Throws unless pi is a bijection on {0..n-1}.
void validate_permutation(const std::vector<int>& pi, int n);

// A_pi with (A_pi)_ij = a_{pi(i) pi(j)}; symmetry and the zero diagonal are
// preserved by construction.
DyadMatrix apply_double_permutation(const DyadMatrix& m,
                                    const std::vector<int>& pi);

}  // namespace dyadperm
