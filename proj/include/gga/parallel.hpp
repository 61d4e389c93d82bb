#pragma once

#include <cstddef>
#include <functional>

namespace gga {

/// Number of worker threads for batch operations; GGA_THREADS overrides the
/// hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n). Each index writes only its own output slot, so
/// results do not depend on the thread count. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace gga
