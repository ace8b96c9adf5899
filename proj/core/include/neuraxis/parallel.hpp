#pragma once

#include <cstdint>
#include <functional>

namespace neuraxis {

// Worker cap for parallel_for. 0 means "hardware concurrency".
void set_max_threads(int n);
int max_threads();

// Runs f(i) for i in [0, n). Work is split into contiguous chunks, one per
// worker. Each index writes only its own outputs, so results are identical
// for any thread count; reductions are left to the caller, in index order.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& f);

}  // namespace neuraxis
