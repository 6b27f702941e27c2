#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace cadv {

// Deterministic RNG. mt19937_64 provides the bit stream; the distributions
// are hand-rolled so that identical seeds give identical streams across
// standard-library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; the paired value is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform in [0, n) without modulo bias.
  uint64_t randint(uint64_t n) {
    if (n == 0) return 0;
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return x % n;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(randint(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Stream derivation for per-epoch / per-batch / per-sample substreams
  // (splitmix64 finalizer over the combined words).
  static uint64_t derive(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t z = base;
    for (uint64_t w : {a, b, c}) {
      z += 0x9e3779b97f4a7c15ull + w;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      z = z ^ (z >> 31);
    }
    return z;
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace cadv
