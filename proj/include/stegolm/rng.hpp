#pragma once

/**
 * Deterministic randomness. Every stage of the pipeline derives its own
 * seed from the experiment seed and a stage name, so stages can be rerun
 * in isolation and still reproduce byte-identical outputs.
 *
 * Distributions are hand-rolled on top of std::mt19937_64 because the
 * standard <random> distributions are not bit-reproducible across
 * implementations.
 */

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace stegolm {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a over the stage name, mixed with the base seed.
inline uint64_t derive_seed(uint64_t base_seed, std::string_view stage) {
  uint64_t h = 1469598103934665603ULL;
  for (char c : stage) {
    h ^= static_cast<uint8_t>(c);
    h *= 1099511628211ULL;
  }
  return splitmix64(base_seed ^ h);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) via rejection.
  uint64_t below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  // Box-Muller, no cached spare so the draw count stays predictable.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Index draw proportional to the given nonnegative weights.
  size_t weighted_index(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    const double r = uniform() * total;
    double cum = 0.0;
    for (size_t i = 0; i + 1 < weights.size(); ++i) {
      cum += weights[i];
      if (r < cum) return i;
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace stegolm
