#pragma once

#include <cstddef>
#include <functional>

namespace patchnet {

// Global worker count. 0 resets to the default, which is the PATCHNET_THREADS
// environment variable when set and the hardware concurrency otherwise.
void set_thread_count(unsigned n);
unsigned thread_count();

// Runs body(begin, end) over a contiguous partition of [0, n). Workers get
// disjoint ranges, so results are independent of the thread count as long as
// the body only writes to its own range.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace patchnet
