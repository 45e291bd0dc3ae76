#pragma once

#include <cstddef>

namespace safenet::runtime {

// Keeps large tensor buffers on the heap instead of fresh mappings per
// allocation. Call once at program start, before any tensor exists.
// No effect outside glibc.
void tune_allocator();

// Worker threads used by the numeric kernels. Results do not depend on it.
void set_threads(std::size_t n);
std::size_t threads();

}  // namespace safenet::runtime
