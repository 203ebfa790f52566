#pragma once

#include <cstddef>
#include <functional>

namespace seqoed {

/// Worker count used when a caller passes threads = 0. Starts at 1.
int default_threads();
void set_default_threads(int threads);

/// Runs body(begin, end) over a static partition of [0, n) into at most
/// `threads` contiguous chunks. Chunk boundaries depend only on n and the
/// thread count, so reductions done per chunk in order are reproducible.
/// The first exception thrown by any chunk is rethrown on the caller.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t begin, std::size_t end)>& body);

}  // namespace seqoed
