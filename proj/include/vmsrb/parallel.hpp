#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vmsrb {

/// Execution policy for element-loop kernels.
///
/// Parallel kernels compute per-element contributions into element-indexed
/// storage concurrently and accumulate them serially in element-index order,
/// so Serial and Parallel results are bitwise identical for any number of
/// threads. Serial is kept as the reference implementation for tests; the
/// bench tool compares the two.
enum class Exec { Serial, Parallel };

inline Exec default_exec() {
#ifdef _OPENMP
  return Exec::Parallel;
#else
  return Exec::Serial;
#endif
}

inline int worker_count(Exec policy) {
#ifdef _OPENMP
  if (policy == Exec::Parallel) return omp_get_max_threads();
#else
  (void)policy;
#endif
  return 1;
}

template <class F>
void parallel_for(std::ptrdiff_t n, Exec policy, F&& f) {
  if (policy == Exec::Parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t i = 0; i < n; ++i) f(i);
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) f(i);
  }
}

}  // namespace vmsrb
