#pragma once

#include <cmath>
#include <cstdint>

namespace gld {

/// Seeded counter-free PRNG (splitmix64 core) with explicit uniform/normal
/// draws. Hand-rolled so that streams are bit-identical across platforms and
/// standard-library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed + 0x9E3779B97F4A7C15ULL) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller (no cached second draw, so the stream
  /// position is a pure function of the number of calls).
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Derive an independent child stream; deterministic in (parent seed, tag).
  Rng fork(uint64_t tag) {
    Rng child(state_ ^ (0xD1B54A32D192ED03ULL * (tag + 1)));
    child.next_u64();
    return child;
  }

 private:
  uint64_t state_;
};

}  // namespace gld
