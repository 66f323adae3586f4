#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace dyadperm {

// Worker cap: DYADPERM_THREADS when set, otherwise hardware concurrency.
inline int max_threads() {
  if (const char* env = std::getenv("DYADPERM_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

namespace detail {
inline thread_local bool inside_parallel_region = false;
}

// Runs body(k) for k in [0, count) across a static block partition. Each call
// must write only to its own slot k; with that discipline the result is
// independent of the worker count, since slot values depend only on k. Nested
// calls degrade to serial execution instead of oversubscribing.
template <class Body>
void parallel_for(std::size_t count, const Body& body) {
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(max_threads()), count);
  if (workers <= 1 || detail::inside_parallel_region) {
    for (std::size_t k = 0; k < count; ++k) body(k);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(count, lo + chunk);
    pool.emplace_back([&, w, lo, hi] {
      detail::inside_parallel_region = true;
      try {
        for (std::size_t k = lo; k < hi; ++k) body(k);
      } catch (...) {
        errors[w] = std::current_exception();
      }
      detail::inside_parallel_region = false;
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace dyadperm
