#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace covdistill {

/// Deterministic random source.
///
/// Streams are xoshiro256** seeded through SplitMix64. Child seeds come from
/// (parent seed, purpose tag, index): the tag is hashed with FNV-1a and mixed
/// with the index through SplitMix64, so any component can open its own
/// stream without coordinating draw order with other components. Normal
/// variates use the polar-free Box-Muller form with both outputs consumed in
/// order. No std:: distributions are used; integer and uniform draws are
/// identical on every platform, normals on any platform sharing a libm.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  static std::uint64_t derive(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);
  static Rng child(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
    return Rng(derive(seed, tag, index));
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi] (inclusive), unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace covdistill
