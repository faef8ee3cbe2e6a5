#pragma once

#include <cstddef>
#include <functional>

namespace roomtwin {

// Worker count used by parallel_for; 0 selects the hardware concurrency.
void set_thread_count(unsigned count);
unsigned thread_count();

// Calls fn(i) for i in [0, n). Each index runs exactly once; callers write
// results into per-index slots so output never depends on scheduling. The
// first exception thrown by any call is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace roomtwin
