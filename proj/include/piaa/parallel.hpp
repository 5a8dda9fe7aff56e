#pragma once

#include <cstddef>
#include <functional>

namespace piaa {

// Process-wide worker count used by the row-parallel kernels. 0 restores the
// default (hardware concurrency, or PIAA_THREADS when set).
void set_thread_count(int threads);
int thread_count();

// Splits [0, n) into fixed blocks of `block` rows and runs fn(begin, end) on
// each. Block boundaries never depend on the thread count, so kernels that
// write disjoint rows produce identical bits for any number of workers.
void parallel_for_blocks(std::size_t n, std::size_t block,
                         const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace piaa
