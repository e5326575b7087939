#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace transforest {

/// Seeded pseudo-random stream (xoshiro256**, seeded through splitmix64).
///
/// All draws used by training go through this type rather than <random>
/// distributions, whose output is implementation-defined; a given seed yields
/// the same sequence on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Independent child stream identified by `stream`. Deriving does not
  /// advance this stream, so child t is a pure function of (seed, t).
  Rng derive(std::uint64_t stream) const;

  std::uint64_t next();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);
  /// Standard normal (Box-Muller, no cached second value).
  double normal();

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace transforest
