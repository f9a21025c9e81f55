#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <unordered_set>
#include <vector>

#include "rrt/errors.hpp"

// Pinned random machinery. Every stochastic procedure in this library draws
// from xoshiro256** seeded through splitmix64, so a (seed, call-sequence)
// pair produces identical streams on every platform. std::random
// distributions are avoided on purpose: their outputs are not specified
// bit-exactly by the standard.

namespace rrt {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Order-sensitive 64-bit mixing of several values; used to derive
/// per-trial / per-epoch seeds from a master seed.
inline std::uint64_t stable_hash64(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x8BADF00D5EEDC0DEULL;
  for (std::uint64_t p : parts) {
    std::uint64_t s = h ^ p;
    h = splitmix64_next(s);
  }
  return h;
}

/// xoshiro256** by Blackman & Vigna (public domain reference implementation).
class Xoshiro256ss {
 public:
  explicit Xoshiro256ss(std::uint64_t seed) {
    for (auto& word : state_) word = splitmix64_next(seed);
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Unbiased uniform integer in [0, n). Mask-and-reject keeps the draw
  /// sequence independent of platform word tricks.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw value_error("Xoshiro256ss::below: n must be positive");
    if (n == 1) return 0;
    std::uint64_t mask = ~std::uint64_t{0} >> countl_zero(n - 1);
    std::uint64_t draw;
    do {
      draw = next() & mask;
    } while (draw >= n);
    return draw;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  static int countl_zero(std::uint64_t x) {
    int n = 0;
    for (std::uint64_t bit = std::uint64_t{1} << 63; bit && !(x & bit); bit >>= 1) ++n;
    return n;
  }
  std::uint64_t state_[4];
};

/// One Binomial(n, p) draw by sequential inversion. Chunks n recursively so
/// (1-p)^chunk stays far from double underflow; exact for p in {0, 1}.
inline std::uint64_t binomial_draw(Xoshiro256ss& rng, std::uint64_t n, double p) {
  if (p < 0.0 || p > 1.0) throw value_error("binomial_draw: p outside [0,1]");
  if (n == 0 || p == 0.0) return 0;
  if (p == 1.0) return n;
  if (static_cast<double>(n) * -std::log1p(-p) > 600.0) {
    const std::uint64_t half = n / 2;
    return binomial_draw(rng, half, p) + binomial_draw(rng, n - half, p);
  }
  const double u = rng.uniform01();
  double pmf = std::exp(static_cast<double>(n) * std::log1p(-p));
  double cdf = pmf;
  const double odds = p / (1.0 - p);
  std::uint64_t k = 0;
  while (u > cdf && k < n) {
    ++k;
    pmf *= static_cast<double>(n - k + 1) / static_cast<double>(k) * odds;
    cdf += pmf;
  }
  return k;
}

/// Floyd's algorithm: k distinct values from [0, population), returned sorted.
inline std::vector<std::uint64_t> sample_without_replacement(
    std::uint64_t population, std::uint64_t k, Xoshiro256ss& rng) {
  if (k > population)
    throw value_error("sample_without_replacement: k exceeds population");
  std::vector<std::uint64_t> out;
  out.reserve(k);
  if (k == population) {
    for (std::uint64_t i = 0; i < population; ++i) out.push_back(i);
    return out;
  }
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(static_cast<std::size_t>(k) * 2);
  for (std::uint64_t j = population - k; j < population; ++j) {
    const std::uint64_t t = rng.below(j + 1);
    if (chosen.insert(t).second) {
      out.push_back(t);
    } else {
      chosen.insert(j);
      out.push_back(j);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

template <typename T>
void shuffle_in_place(std::vector<T>& v, Xoshiro256ss& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace rrt
