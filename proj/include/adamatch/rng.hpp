#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace adamatch {

/// splitmix64 finalizer; used to combine seeds and derive child streams.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

/// Deterministic random stream. mt19937_64 gives a portable bit sequence;
/// the distributions below are implemented here rather than with
/// <random> adaptors, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform in [0,1) with 53 random bits.
  double u01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  template <typename S>
  S uniform() {
    return static_cast<S>(u01());
  }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  bool coin() { return (next_u64() & 1u) != 0; }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = u01(), u2 = u01();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Independent child stream.
  Rng fork() { return Rng(mix64(next_u64())); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace adamatch
