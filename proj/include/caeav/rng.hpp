#pragma once

#include <cstdint>

namespace caeav {

/// SplitMix64 step; used to expand a 64-bit seed into generator state and to
/// derive independent substreams.
std::uint64_t splitmix64(std::uint64_t& state);

/// xoshiro256** seeded through SplitMix64. Every draw is specified bit-for-bit:
///   uniform()  = (next() >> 11) * 2^-53            in [0, 1)
///   normal()   = sqrt(-2 ln(1 - u1)) * cos(2 pi u2), two uniforms per call
/// so that streams are reproducible across platforms and languages.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  /// Uniform integer in [0, n) by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t n);

  /// Independent generator for (this seed, stream index). Does not advance *this.
  Rng fork(std::uint64_t stream) const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

}  // namespace caeav
