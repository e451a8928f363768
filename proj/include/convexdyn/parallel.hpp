#pragma once

#include <cstddef>
#include <functional>

namespace convexdyn {

// Worker count. Reads CONVEXDYN_THREADS on first use (unset or invalid means
// all hardware threads); set_thread_count overrides it, 0 restores the env value.
int thread_count();
void set_thread_count(int n);

// Splits [0, n) into fixed chunks of `chunk` items and calls fn(begin, end,
// chunk_index) for each. The partition depends only on n and chunk, never on
// the worker count, so per-chunk partial sums reduced in chunk order are
// bitwise reproducible.
void parallel_chunks(std::size_t n, std::size_t chunk,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

inline std::size_t chunk_count(std::size_t n, std::size_t chunk) {
  return chunk == 0 ? 0 : (n + chunk - 1) / chunk;
}

}  // namespace convexdyn
