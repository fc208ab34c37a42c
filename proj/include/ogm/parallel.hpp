#pragma once

#include <cstddef>
#include <functional>

namespace ogm {

// Runs fn(0..n-1) on up to `jobs` threads (0 = hardware concurrency). Each
// index runs exactly once; the exception from the lowest failing index is
// rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

std::size_t resolve_jobs(std::size_t jobs);

}  // namespace ogm
