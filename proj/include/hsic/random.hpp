#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace hsic {

/// Generator behind every random choice: initialization, dropout masks,
/// shuffles and splits.
using Rng = std::mt19937_64;

/// SplitMix64-style mixing of a base seed with stream coordinates.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = base;
  for (std::uint64_t part : {a, b}) {
    z += 0x9E3779B97F4A7C15ULL + part;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
  }
  return z;
}

/// Uniform draw in [0, 1) from the top 53 bits of the generator.
inline double unit_uniform(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace hsic
