#pragma once

namespace semfuse {

/// Keeps large scratch buffers on the heap between optimisation steps instead
/// of mapping and unmapping them each time. Call once at program start; a
/// no-op outside glibc.
void configure_allocator();

}  // namespace semfuse
