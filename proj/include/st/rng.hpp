#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace st {

// Deterministic RNG with portable output. splitmix64 core; every stream is a
// single 64-bit state, so derived per-sample streams are cheap to construct.
// std::mt19937 + std distributions are avoided on purpose: distribution output
// is implementation-defined and would break run-to-run equality across
// standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Uniform integer in [0,n), n > 0. Rejection keeps it unbiased.
  int below(int n) {
    uint64_t span = uint64_t(n);
    uint64_t limit = ~uint64_t(0) - ~uint64_t(0) % span;
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return int(v % span);
  }

  bool chance(double p) { return uniform() < p; }

  // Standard normal via Box-Muller (cosine branch only).
  double normal() {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = int(v.size()) - 1; i > 0; --i) {
      int j = below(i + 1);
      std::swap(v[i], v[size_t(j)]);
    }
  }

 private:
  uint64_t state_;
};

namespace detail {
inline uint64_t mix64(uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdull;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ull;
  x ^= x >> 33;
  return x;
}
}  // namespace detail

// Derives an independent stream from a seed and a list of tags
// (e.g. purpose, epoch, sample index).
template <typename... Tags>
Rng derive_rng(uint64_t seed, Tags... tags) {
  uint64_t s = detail::mix64(seed + 0x2545f4914f6cdd1dull);
  ((s = detail::mix64(s ^ (uint64_t(tags) + 0x9e3779b97f4a7c15ull))), ...);
  return Rng(s);
}

}  // namespace st
