#pragma once

#include <cstddef>

#ifdef CS3D_HAVE_OPENMP
#include <omp.h>
#endif

namespace cs3d {

/// Worker count: CS3D_THREADS when set and positive, else hardware concurrency.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n). Iterations must write disjoint outputs so the
/// result does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
#ifdef CS3D_HAVE_OPENMP
  const int threads = static_cast<int>(thread_count());
  if (threads > 1 && n > 1) {
#pragma omp parallel for num_threads(threads) schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) fn(static_cast<std::size_t>(i));
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

}  // namespace cs3d
