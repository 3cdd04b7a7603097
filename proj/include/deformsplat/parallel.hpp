#pragma once

#include <cstddef>
#include <functional>

namespace deformsplat {

/// Number of worker threads used by parallel_for. 0 means hardware concurrency.
void set_thread_count(unsigned threads);
unsigned thread_count();

/// Runs body(i) for i in [0, count). Each index is visited exactly once;
/// callers must write results into per-index slots so the outcome does not
/// depend on scheduling.
void parallel_for(std::size_t count, const std::function<void(std::size_t)> &body);

} // namespace deformsplat
