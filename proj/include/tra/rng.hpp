#pragma once

#include <cmath>
#include <cstdint>

namespace tra {

// SplitMix64 finalizer. Full-avalanche 64-bit mix.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic counter-based generator (SplitMix64). The stream is a pure
// function of (seed, call index), so state serialises as two integers and
// derived streams never alias. Identical across platforms.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) : seed_(seed), counter_(0) {}

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }
  void restore(uint64_t seed, uint64_t counter) {
    seed_ = seed;
    counter_ = counter;
  }

  uint64_t next_u64() { return mix64(seed_ + 0x632be59bd9b4e019ULL * ++counter_); }

  // Independent child stream. mix64 on both inputs keeps nearby ids apart.
  static uint64_t derive(uint64_t seed, uint64_t stream_id) {
    return mix64(mix64(seed) ^ mix64(stream_id + 0x9e3779b97f4a7c15ULL));
  }
  Rng child(uint64_t stream_id) const { return Rng(derive(seed_, stream_id)); }

  // Uniform in [0, 1), 24 bits of mantissa.
  float next_float() { return static_cast<float>(next_u64() >> 40) * 0x1p-24f; }
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1p-53; }

  // Uniform integer in [0, n).
  uint64_t next_below(uint64_t n) {
    // Lemire-style rejection keeps the draw unbiased.
    uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto lo = static_cast<uint64_t>(m);
    if (lo < n) {
      uint64_t t = (0 - n) % n;
      while (lo < t) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<uint64_t>(m);
      }
    }
    return static_cast<uint64_t>(m >> 64);
  }

  int next_int(int lo, int hi) {  // inclusive range
    return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Standard normal, Box-Muller with cached spare.
  float next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = next_double();
    } while (u1 <= 1e-300);
    u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586477 * u2;
    spare_ = static_cast<float>(r * std::sin(a));
    have_spare_ = true;
    return static_cast<float>(r * std::cos(a));
  }

 private:
  uint64_t seed_;
  uint64_t counter_;
  bool have_spare_ = false;
  float spare_ = 0.f;
};

// Stateless per-element uniform used for dropout masks: parallel-safe and
// replayable in backward without storing the mask.
inline float hash_uniform(uint64_t seed, uint64_t a, uint64_t b) {
  return static_cast<float>(mix64(mix64(seed ^ mix64(a)) + b) >> 40) * 0x1p-24f;
}

}  // namespace tra
