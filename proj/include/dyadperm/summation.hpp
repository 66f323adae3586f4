#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace dyadperm {

namespace detail {

inline constexpr std::size_t kPairwiseBase = 64;

template <class Term>
double pairwise_sum_impl(std::size_t lo, std::size_t hi, const Term& term) {
  if (hi - lo <= kPairwiseBase) {
    double s = 0.0;
    for (std::size_t k = lo; k < hi; ++k) s += term(k);
    return s;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_sum_impl(lo, mid, term) + pairwise_sum_impl(mid, hi, term);
}

}  // namespace detail

// Pairwise (cascade) summation over term(0..count-1). The reduction tree is a
// fixed function of count alone, so results are reproducible regardless of
// caller threading, and the rounding error grows like log(count) instead of
// count. Every statistically meaningful reduction goes through here.
template <class Term>
double pairwise_sum(std::size_t count, const Term& term) {
  if (count == 0) return 0.0;
  return detail::pairwise_sum_impl(0, count, term);
}

inline double pairwise_sum(const std::vector<double>& v) {
  return pairwise_sum(v.size(), [&](std::size_t k) { return v[k]; });
}

// Neumaier-compensated accumulator for streaming additions where the term
// count is not known up front.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace dyadperm
