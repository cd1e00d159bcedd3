#pragma once

#include <cstddef>
#include <functional>

namespace haht {

// Worker count from HAHT_THREADS; unset or invalid means 1 (single-threaded
// reference mode). Read on every call so tests can flip the environment.
int worker_count();

// Runs fn(i) for i in [0, n). With more than one worker the index range is
// split into contiguous chunks, one thread per chunk; results written by
// index stay deterministic.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Static chunk assignment: worker w handles [begin(w), end(w)).
std::size_t chunk_begin(std::size_t n, int workers, int w);
std::size_t chunk_end(std::size_t n, int workers, int w);

}  // namespace haht
