#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace captensor {

// splitmix64 finalizer; used to derive independent stream seeds from a root seed.
std::uint64_t mix_seed(std::uint64_t x);

// Seed for stream `stream`, counter `index` under `root`. Distinct (stream, index)
// pairs give unrelated generators, so loops can be split across threads freely.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream, std::uint64_t index = 0);

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, std::uint64_t stream, std::uint64_t index = 0) {
  return Rng(derive_seed(root, stream, index));
}

// Uniform double in [0, 1) from 53 random bits. Independent of the library's
// distribution implementations so sampled datasets are portable.
double uniform01(Rng& rng);
// Marsaglia polar method.
double standard_normal(Rng& rng);
// Fisher-Yates with uniform01-based index draws.
void shuffle_indices(std::vector<std::size_t>& v, Rng& rng);
std::size_t uniform_index(Rng& rng, std::size_t n);

// Worker count: CAPTENSOR_THREADS if set, otherwise hardware concurrency.
unsigned default_thread_count();

// Runs body(i) for i in [0, n) on up to `threads` workers. Bodies must write only
// to per-index slots; results are therefore independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  unsigned threads = 0);

}  // namespace captensor
