#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace miro {

// Keeps large tensor buffers on the heap between training steps instead of
// returning them to the OS, which otherwise page-faults every step.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace miro
