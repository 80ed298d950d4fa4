#pragma once

#include "vaevar/types.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>

namespace vaevar {

using Rng = std::mt19937_64;

/// Mixes a master seed with a list of counters into an independent stream seed.
/// Results depend only on the inputs, never on which worker asks.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> counters) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  std::uint64_t h = mix(master);
  for (std::uint64_t c : counters) h = mix(h ^ mix(c));
  return h;
}

inline Vector standard_normal(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

}  // namespace vaevar
