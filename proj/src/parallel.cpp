#include "maxhmm/parallel.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace maxhmm::par {

namespace {
int g_threads = 0;  // 0: use the runtime default
}

int threads() {
  if (g_threads > 0) return g_threads;
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) { g_threads = std::max(0, n); }

int chunk_count(int n) { return std::max(1, std::min(n, threads())); }

void for_each_chunk(int n, const std::function<void(int, int, int)>& body) {
  if (n <= 0) return;
  const int nc = chunk_count(n);
  const int base = n / nc, rem = n % nc;
#ifdef _OPENMP
#pragma omp parallel for schedule(static, 1) num_threads(nc)
#endif
  for (int c = 0; c < nc; ++c) {
    const int begin = c * base + std::min(c, rem);
    const int end = begin + base + (c < rem ? 1 : 0);
    body(c, begin, end);
  }
}

}  // namespace maxhmm::par
