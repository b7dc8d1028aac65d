#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace tpnet {

/// Keeps freed heap memory in the process. The forward and backward passes
/// allocate and release many small matrices per call; with glibc's default
/// trimming each call pays fresh page faults for the same memory.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
#endif
}

}  // namespace tpnet
