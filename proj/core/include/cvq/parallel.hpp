#pragma once

#include <cstddef>
#include <functional>

namespace cvq {

/// Worker cap read from CVQ_THREADS (default 1).
std::size_t max_threads();
void set_max_threads(std::size_t n);

/// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is
/// handled by exactly one call, so per-index results do not depend on the
/// thread count.
void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace cvq
