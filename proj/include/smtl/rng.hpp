#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace smtl::rng {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Derives an independent stream id from a base seed and a salt.
inline uint64_t mix(uint64_t seed, uint64_t salt) {
  uint64_t s = seed ^ (0x632be59bd9b4e019ull + salt * 0x9e3779b97f4a7c15ull);
  return splitmix64(s);
}
inline uint64_t mix(uint64_t seed, uint64_t a, uint64_t b) {
  return mix(mix(seed, a), b);
}
inline uint64_t mix(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
  return mix(mix(seed, a, b), c);
}

// Deterministic random stream. mt19937_64 is fully specified by the
// standard; the distributions below are hand-rolled so that results are
// identical across platforms and standard-library implementations.
class Stream {
 public:
  explicit Stream(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer, both bounds inclusive. Rejection sampling keeps the
  // distribution exact.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<int64_t>(next_u64());
    uint64_t x, r;
    do {
      x = next_u64();
      r = x % span;
    } while (x - r > uint64_t(0) - span);
    return lo + static_cast<int64_t>(r);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace smtl::rng
