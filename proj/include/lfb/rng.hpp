#pragma once

#include <cmath>
#include <cstdint>

namespace lfb {

/// Purpose-split random streams. Each consumer (weight init, dropout,
/// distractor sampling, batch order, data synthesis) draws from its own
/// stream, so adding draws in one place never shifts the sequence seen by
/// another.
enum class RngUse : std::uint64_t {
  kInit = 1,
  kDropout = 2,
  kDistractors = 3,
  kData = 4,
  kSynthetic = 5,
};

/// Counter-based generator: a SplitMix64-style finalizer applied to
/// key + counter, where the key mixes (seed, use). No hidden global state,
/// identical sequences for identical (seed, use) on every platform.
class RngStream {
 public:
  RngStream(std::uint64_t seed, RngUse use)
      : key_(mix(seed ^ mix(static_cast<std::uint64_t>(use) * kGamma))) {}

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

  /// Uniform double in [0, 1), 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n); n must be nonzero. Uses rejection to avoid
  /// modulo bias.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  /// Standard normal via Box-Muller; caches the second deviate.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // Shift into (0, 1] so log() never sees zero.
    const double u1 =
        (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

  static std::uint64_t mix(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace lfb
