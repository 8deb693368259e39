#pragma once

#include <cstdint>
#include <functional>

namespace smtl {

// Number of worker threads: SMTL_THREADS if set, else hardware concurrency.
// Read on every call so tests can change the cap at runtime.
int worker_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous index ranges,
// one per worker, so results written to per-index slots are race-free and
// independent of scheduling. Exceptions from workers are rethrown.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn,
                  int max_threads = 0);

}  // namespace smtl
