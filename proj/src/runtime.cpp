#include "semfuse/runtime.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace semfuse {

void configure_allocator() {
#if defined(__GLIBC__)
  // Activation buffers reach tens of MB; the default threshold would mmap each one.
  mallopt(M_MMAP_THRESHOLD, 512 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace semfuse
