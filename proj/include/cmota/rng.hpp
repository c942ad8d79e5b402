#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace cmota {

// Deterministic, serializable RNG stack. We do not use <random> distributions
// because their output is not pinned across standard library implementations;
// reproducibility tests require bit-identical streams everywhere.

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Per-item seed sequence: seed_for(seed, i) is a pure function, so items
// (stories, workers) can be generated independently and in parallel.
inline uint64_t seed_for(uint64_t seed, uint64_t index) {
  uint64_t s = seed + index * 0x9E3779B97F4A7C15ull;
  return splitmix64(s);
}

class Rng {
 public:
  Rng() : Rng(0x243F6A8885A308D3ull) {}
  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;  // xoshiro256**
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Unbiased via rejection sampling.
  uint64_t next_below(uint64_t bound) {
    const uint64_t limit = ~uint64_t(0) - (~uint64_t(0) % bound);
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % bound;
  }

  int next_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double next_real() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool next_bool(double p) { return next_real() < p; }

  // Box-Muller; the spare value is discarded so the state is just s_[4].
  double next_normal() {
    double u1 = next_real();
    double u2 = next_real();
    while (u1 <= 0.0) u1 = next_real();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; --i) {
      const uint64_t j = next_below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<uint64_t, 4> s_{};
};

}  // namespace cmota
