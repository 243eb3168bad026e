#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace btseg {

/// Deterministic random stream. Draws are mapped from raw mt19937_64 output
/// by hand so sequences are identical on every platform, unlike the
/// std::*_distribution wrappers.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(mix(seed)) {}

  /// Derives an independent stream keyed by up to three ids (run, period, ...).
  static RngStream derive(std::uint64_t base_seed, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0) {
    std::uint64_t s = mix(base_seed);
    s = mix(s ^ (0x9e3779b97f4a7c15ULL + a));
    s = mix(s ^ (0xbf58476d1ce4e5b9ULL + b));
    s = mix(s ^ (0x94d049bb133111ebULL + c));
    return RngStream(s);
  }

  /// Uniform on [0, 1).
  double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // Rejection against the largest multiple of n below 2^64.
    const std::uint64_t limit = n * ((~std::uint64_t(0)) / n);
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  std::uint64_t raw() { return gen_(); }

 private:
  // splitmix64 finalizer.
  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace btseg
