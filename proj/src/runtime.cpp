#include "fedgen/runtime.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fedgen {

void tune_allocator() {
#if defined(__GLIBC__)
    // 32 MiB is the largest threshold glibc accepts on 64-bit targets.
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

} // namespace fedgen
