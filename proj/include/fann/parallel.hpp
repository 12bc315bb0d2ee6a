#pragma once

#include <cstddef>
#include <functional>

namespace fann {

/// Worker cap: FANN_THREADS when set to a positive integer, else the core count.
std::size_t thread_count();

/// Runs fn(0..n-1) over up to thread_count() threads with static chunking.
/// The first exception thrown by any task is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace fann
