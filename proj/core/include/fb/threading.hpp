#pragma once

#include <cstdint>
#include <functional>

namespace fb {

// Worker count: FB_THREADS env var if set (min 1), else hardware concurrency.
int thread_count();

// Runs fn(i) for i in [0,n). Chunks are assigned statically so the set of
// indices each worker touches is a pure function of (n, thread_count()).
void parallel_for(int64_t n, const std::function<void(int64_t)> &fn);

// Reduces fn(i) over [0,n) in index order regardless of worker count: partial
// sums are per-chunk and combined low chunk to high chunk in double precision.
double ordered_reduce(int64_t n, const std::function<double(int64_t)> &fn);

}  // namespace fb
