#pragma once

#include <array>
#include <cmath>
#include <string>

#include "pvc/common.hpp"
#include "pvc/hash.hpp"

namespace pvc {

// xoshiro256** with hand-rolled distributions. The standard <random>
// distributions are implementation-defined, which would break the
// bit-reproducibility contracts (checkpoint resume, cross-run identical
// traces), so everything here is spelled out and the state is four words,
// trivially serializable.
class Rng {
 public:
  Rng() : Rng(0) {}

  explicit Rng(u64 seed) {
    u64 x = seed;
    for (auto& w : s_) {
      x += 0x9e3779b97f4a7c15ull;
      w = mix64(x);
    }
  }

  u64 next_u64() {
    const u64 result = rotl(s_[1] * 5, 7) * 9;
    const u64 t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), exactly unbiased (bitmask rejection).
  i64 uniform_int(i64 n) {
    require_arg(n > 0, "uniform_int: n must be positive");
    const u64 un = static_cast<u64>(n);
    u64 mask = ~0ull;
    if (un < (1ull << 63)) {
      mask = 1;
      while (mask < un) mask <<= 1;
      mask -= 1;
    }
    for (;;) {
      const u64 v = next_u64() & mask;
      if (v < un) return static_cast<i64>(v);
    }
  }

  // Standard normal via Box-Muller. The second value of the pair is
  // discarded so the generator stays stateless beyond the four words.
  double normal() {
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Fisher-Yates shuffle.
  template <typename Vec>
  void shuffle(Vec& v) {
    for (i64 i = static_cast<i64>(v.size()) - 1; i > 0; --i) {
      const i64 j = uniform_int(i + 1);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

  std::array<u64, 4> state() const { return s_; }
  void set_state(const std::array<u64, 4>& s) { s_ = s; }

  // Independent stream keyed by a string, e.g. one per source utterance.
  Rng fork(const std::string& key) const {
    Rng r;
    u64 base = fnv1a64(key);
    for (std::size_t i = 0; i < 4; ++i) base = hash_combine(base, s_[i]);
    for (auto& w : r.s_) {
      base += 0x9e3779b97f4a7c15ull;
      w = mix64(base);
    }
    return r;
  }

 private:
  static u64 rotl(u64 x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<u64, 4> s_{};
};

}  // namespace pvc
