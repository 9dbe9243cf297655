#pragma once

#include <cstddef>
#include <functional>

namespace scd2te {

/// Worker cap used by every data-parallel loop. 0 resets to hardware concurrency.
void set_thread_count(unsigned count);
unsigned thread_count();

/// Runs body(i) for i in [0, n) across the worker pool. Work is split into
/// contiguous static chunks; callers write only to slot i so results do not
/// depend on the thread count. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace scd2te
