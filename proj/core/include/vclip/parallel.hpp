#pragma once

#include <cstddef>
#include <functional>

namespace vclip {

/// Worker count from VCLIP_THREADS, defaulting to the hardware concurrency.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n). Work is split into fixed contiguous blocks, so
/// callers that write result slot i from fn(i) get thread-count-independent output.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace vclip
