#pragma once

#include <cstddef>
#include <functional>

namespace occattn {

/// Keeps freed heap pages mapped between training steps (glibc only; no-op elsewhere).
void tune_allocator();

/// Worker cap: OCCATTN_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Runs fn(begin, end) over contiguous chunks of [0, n). Results must be written per
/// index so the outcome does not depend on the number of workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace occattn
