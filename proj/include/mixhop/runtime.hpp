#pragma once

namespace mixhop {

/// Keeps freed large blocks in the heap instead of returning them to the
/// kernel. Training reallocates the same n x width buffers every step, and
/// without this each one is a fresh mmap with zero-filled pages. No-op
/// outside glibc.
void configure_allocator() noexcept;

}  // namespace mixhop
