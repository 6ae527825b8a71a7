#pragma once

#include <cstddef>
#include <functional>

namespace hagcn {

// Worker cap: HAGCN_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n). Iterations must write disjoint outputs; the
// partition is static so results do not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Keeps freed large blocks inside the process heap. Training allocates the
// same feature-map sizes every step; returning them to the OS each time
// costs more than the arithmetic at desk scale. No-op outside glibc.
void retain_freed_memory();

}  // namespace hagcn
