#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace disp::detail {

// Static row partition across threads. Each index is processed by exactly one
// thread with identical per-element arithmetic, so results are bitwise
// independent of the thread count.
template <typename Fn>
void parallel_blocks(std::size_t n, Fn&& fn) {
  if (n == 0) return;
#ifdef _OPENMP
  int threads = omp_get_max_threads();
  if (threads > 1 && n > 1) {
#pragma omp parallel for schedule(static)
    for (int t = 0; t < threads; ++t) {
      std::size_t lo = n * static_cast<std::size_t>(t) / threads;
      std::size_t hi = n * (static_cast<std::size_t>(t) + 1) / threads;
      if (lo < hi) fn(lo, hi);
    }
    return;
  }
#endif
  fn(0, n);
}

}  // namespace disp::detail
