#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace wassflow {

using Vec = std::vector<double>;

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Number of worker threads for batch loops. Reads WASSFLOW_THREADS once;
// 1 (the default) keeps every reduction sequential and bit-reproducible.
int max_threads();

// Static partition of [0,n) into one contiguous chunk per worker. Chunk
// boundaries depend only on (n, threads), and callers merge per-chunk
// results in chunk order, so a fixed thread count gives a fixed result.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t, int)>& body);

}  // namespace wassflow
