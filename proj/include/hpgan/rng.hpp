#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace hpgan {

/// Counter-based random stream: draw k of seed s is a pure function of (s, k), so a stream is
/// fully described by two integers and can be checkpointed and resumed exactly.
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix(seed_, counter_++); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  /// Standard normal by Box-Muller; consumes two draws.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Independent stream for a named purpose.
  RngStream derive(std::string_view tag) const { return RngStream(mix(seed_ ^ hash(tag), 0x5eedULL)); }
  RngStream derive(std::uint64_t tag) const { return RngStream(mix(seed_, tag ^ 0xd1b54a32d192ed03ULL)); }

  static std::uint64_t hash(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  static std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t counter) {
    return splitmix(splitmix(seed) ^ (counter * 0xd6e8feb86659fd93ULL + 0x632be59bd9b4e019ULL));
  }

  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace hpgan
