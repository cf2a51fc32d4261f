#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace spotkit::detail {

// Deterministic helpers on top of mt19937_64. The standard distributions are
// implementation-defined, so streams are drawn directly from the engine to keep
// results identical across standard libraries.

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
}

/// Uniform double in [0, 1).
inline double unit_uniform(Rng &rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng &rng, double lo, double hi) {
  return lo + (hi - lo) * unit_uniform(rng);
}

/// Uniform index in [0, n).
inline std::size_t uniform_index(Rng &rng, std::size_t n) {
  return static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(n));
}

/// Standard normal via Box-Muller.
inline double normal(Rng &rng) {
  double u1 = unit_uniform(rng);
  while (u1 <= 0.0) u1 = unit_uniform(rng);
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

template <typename T> void shuffle(std::span<T> values, Rng &rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    std::swap(values[i - 1], values[j]);
  }
}

inline std::vector<std::size_t> permutation(std::size_t n, Rng &rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  shuffle(std::span<std::size_t>(p), rng);
  return p;
}

} // namespace spotkit::detail
