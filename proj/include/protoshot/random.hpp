#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace protoshot {

/// Seeded pseudo-random stream that can be split into independent children.
///
/// fork(i) derives the i-th child from the stream's seed without consuming
/// draws, so parallel consumers indexed by i see fixed, non-overlapping
/// subsequences regardless of scheduling. split() derives a child from the
/// next draw. Distributions are implemented here rather than through
/// <random>'s distribution classes, whose outputs vary across standard
/// libraries.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, n); n must be positive.
  std::size_t below(std::size_t n);

  RandomStream split();
  RandomStream fork(std::uint64_t index) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// SplitMix64 finalizer; a bijective 64-bit mixer.
std::uint64_t mix_seed(std::uint64_t value);

}  // namespace protoshot
