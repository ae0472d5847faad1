#pragma once

#include <cstddef>
#include <functional>

namespace cotlab {

// Size of the shared worker pool: COTLAB_WORKERS when set (clamped to >= 1),
// otherwise the hardware concurrency.
std::size_t worker_count();

// Runs fn(0) .. fn(n-1) across the pool and blocks until every call returns.
// Jobs must be independent; the first exception thrown by any job is
// rethrown here after the remaining workers drain.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace cotlab
