#pragma once

#include <functional>

namespace maxhmm::par {

// Worker count used by the parallel kernels. Defaults to the OpenMP thread
// limit (1 in a serial build). set_threads(0) restores the default.
int threads();
void set_threads(int n);

// Splits [0, n) into at most threads() contiguous chunks and runs
// body(chunk_index, begin, end) on each, possibly concurrently. Callers keep
// one accumulator per chunk and fold them in chunk order afterwards, so a
// reduction gives the same floating point result no matter how many workers
// actually ran.
int chunk_count(int n);
void for_each_chunk(int n, const std::function<void(int, int, int)>& body);

}  // namespace maxhmm::par
