#pragma once

// Seed derivation and the truncated Gaussian used by the noise models.

#include <cstdint>
#include <random>

namespace vfm {

// Independent stream seeds from one base seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Standard normal draw rejected outside [-limit, limit].
inline double truncated_normal(std::mt19937_64& rng, double limit = 5.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const double e = n(rng);
    if (e >= -limit && e <= limit) return e;
  }
}

}  // namespace vfm
