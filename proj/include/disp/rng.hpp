#pragma once

#include <cstdint>
#include <vector>

namespace disp {

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter), so any part of a run can be reproduced without
// replaying the draws before it. The mixer is SplitMix64 applied to the
// combined key.
//
//   key   = seed ^ (stream * 0x9E3779B97F4A7C15)
//   draw  = splitmix64(key + counter * 0xBF58476D1CE4E5B9)
//
// Streams keep independent uses of the same experiment seed (color
// assignment, splits, weight init, shuffles, ...) from colliding.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(seed ^ (stream * 0x9E3779B97F4A7C15ULL)) {}

  std::uint64_t bits(std::uint64_t counter) const {
    std::uint64_t z = key_ + counter * 0xBF58476D1CE4E5B9ULL;
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(std::uint64_t counter, double lo, double hi) const {
    return lo + (hi - lo) * uniform(counter);
  }

  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t counter, std::uint64_t n) const {
    return static_cast<std::uint64_t>(uniform(counter) * static_cast<double>(n));
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
};

/// Seed-derived sub-key, for giving each layer/epoch its own stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  return CounterRng(seed, 0x5D8F12B4C07A3E96ULL).bits(salt);
}

/// Deterministic Fisher-Yates permutation of {0, ..., n-1}.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed,
                                                 std::uint64_t stream) {
  CounterRng rng(seed, stream);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = rng.index(n - i, i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace disp
