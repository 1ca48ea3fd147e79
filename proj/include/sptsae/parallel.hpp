#pragma once

#include <cstddef>
#include <functional>

namespace spt {

// Worker count from SPT_SAE_THREADS when set, else hardware concurrency.
unsigned default_threads();

// Runs body(i) for i in [0, n) on up to `threads` workers. Callers write
// results into slot i, so output never depends on scheduling. The first
// exception thrown by any body is rethrown after all workers join.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body);

}  // namespace spt
