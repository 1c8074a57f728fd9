#pragma once

#include <cstddef>
#include <functional>

namespace dhm {

/// Number of worker threads used by internal parallel loops. Defaults to 1;
/// the CLI sets it from --threads or DHM_THREADS.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Splits [0, n) into at most `threads` contiguous chunks and runs
/// fn(begin, end) on each, blocking until all complete. Chunk boundaries
/// depend only on (n, threads), so per-chunk reduction order is fixed.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t threads);

inline void parallel_for(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
  parallel_for(n, fn, thread_count());
}

}  // namespace dhm
