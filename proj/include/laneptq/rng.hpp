#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <utility>
#include <vector>

namespace laneptq {

// Deterministic RNG used everywhere in the toolkit. std::mt19937_64 is
// seeded through splitmix64 so that nearby seeds decorrelate, and the
// samplers below avoid libstdc++ distribution internals, which keeps
// streams reproducible across standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix64(seed)) {}

  // Derive an independent stream from a seed and an arbitrary key path,
  // e.g. Rng::derive(master, {scene_idx}) or derive(seed, {img, level, rerun}).
  static Rng derive(uint64_t seed, std::initializer_list<uint64_t> keys) {
    uint64_t s = splitmix64(seed);
    for (uint64_t k : keys) s = splitmix64(s ^ (k + 0x9e3779b97f4a7c15ULL));
    return Rng(s);
  }

  uint64_t next_u64() {
    // xorshift* generator; period 2^64 - 1, plenty for this workload.
    uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dULL;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  uint64_t uniform_int(uint64_t n) {
    // Multiply-shift; bias is negligible at these ranges (n << 2^64).
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(uniform_int(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Standard normal via Box-Muller (no cached spare, so the stream is a
  // pure function of the call sequence).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates; implementation-defined std::shuffle is avoided on purpose.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_int(static_cast<uint64_t>(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  uint64_t state_;
};

}  // namespace laneptq
