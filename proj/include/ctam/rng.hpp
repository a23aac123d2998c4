#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace ctam {

// Sampling helpers on top of mt19937_64. std::uniform_*_distribution and
// std::shuffle are not pinned across standard libraries, so everything that
// must produce byte-identical artifacts draws through these instead.

inline double uniform01(std::mt19937_64& rng) {
  // 53-bit mantissa uniform in [0,1)
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Symmetric uniform in [-scale, scale].
inline double uniform_pm(std::mt19937_64& rng, double scale) {
  return (2.0 * uniform01(rng) - 1.0) * scale;
}

// Inclusive integer range.
inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(rng() % span);
}

// splitmix64 over (seed, stream): independent generators per item, stable
// under reordering of the items themselves.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Fisher-Yates with a pinned draw sequence.
template <typename T>
void seeded_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace ctam
