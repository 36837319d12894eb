#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rapt {

/// Deterministic RNG wrapper. All sampling goes through these helpers so the
/// bit stream does not depend on library-specific distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : base_(seed), engine_(seed_mix(seed, 0x6a09e667f3bcc909ull)) {}

  /// Derive an independent stream for a sub-purpose (window sampling, noise,
  /// per-episode generators, ...) without consuming shared state.
  Rng fork(std::uint64_t tag) const { return Rng(seed_mix(base_, tag)); }

  std::uint64_t next_u64() { return engine_(); }

  double uniform01() {
    // 53-bit mantissa in [0,1).
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Box-Muller; no hidden distribution state.
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  std::size_t uniform_index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

 private:
  static std::uint64_t seed_mix(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t base_;
  std::mt19937_64 engine_;
};

}  // namespace rapt
