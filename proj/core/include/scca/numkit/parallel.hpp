#pragma once

#include <cstddef>
#include <functional>

namespace scca::nk {

// Worker count used by tensor kernels. Every kernel partitions work so that
// each output element is produced by exactly one task in a fixed loop order,
// so results are bit-identical for any thread count.
std::size_t num_threads();
void set_num_threads(std::size_t n);

// Reads SCC_THREADS (default 1) and applies it.
void configure_threads_from_env();

// Process setup for executables: keeps freed heap memory mapped (the training
// loop reallocates the same large buffers every step) and applies
// SCC_THREADS.
void configure_process();

// Calls fn(i) for i in [0, n). Blocks until all calls return; rethrows the
// first exception raised by a task.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace scca::nk
