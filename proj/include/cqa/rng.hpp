#pragma once

#include <cstdint>

namespace cqa {

// Counter-based RNG: every draw is a pure function of (seed, stream, index),
// so repeated evaluation of the same site yields the same value regardless of
// call order. Streams separate independent consumers (dropout sites, init of
// different parameters, epoch shuffles).
struct CounterRng {
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static std::uint64_t draw(std::uint64_t seed, std::uint64_t stream,
                            std::uint64_t index) {
    return mix(mix(mix(seed) ^ stream) ^ index);
  }

  // Uniform in [0, 1).
  static double uniform(std::uint64_t seed, std::uint64_t stream,
                        std::uint64_t index) {
    return static_cast<double>(draw(seed, stream, index) >> 11) *
           (1.0 / 9007199254740992.0);
  }

  // Uniform in [-bound, bound).
  static double uniform_symmetric(std::uint64_t seed, std::uint64_t stream,
                                  std::uint64_t index, double bound) {
    return (2.0 * uniform(seed, stream, index) - 1.0) * bound;
  }
};

}  // namespace cqa
