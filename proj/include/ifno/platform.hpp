#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ifno {

/// Training allocates and frees many few-hundred-kB temporaries per sample.
/// glibc returns such blocks to the kernel on every free by default, which
/// costs more than the arithmetic; keep them in the heap instead. Call once
/// at program start. No-op elsewhere.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace ifno
