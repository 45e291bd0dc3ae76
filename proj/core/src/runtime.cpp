#include "safenet/runtime.hpp"

#include <omp.h>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "safenet/errors.hpp"

namespace safenet::runtime {

void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

void set_threads(std::size_t n) {
  if (n < 1) throw ContractError("threads must be >= 1");
  omp_set_num_threads(static_cast<int>(n));
}

std::size_t threads() { return static_cast<std::size_t>(omp_get_max_threads()); }

}  // namespace safenet::runtime
