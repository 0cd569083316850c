#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mcsr {

/// Keeps large training buffers on the heap instead of fresh mmap pages
/// each step (about 10% faster training on glibc). No-op elsewhere.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace mcsr
