#pragma once

#include <cstdint>
#include <functional>

namespace msconv {

// Worker count from MSCONV_THREADS (0 or unset = hardware concurrency).
int thread_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous static chunks so
// the assignment of indices to workers never depends on timing.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace msconv
