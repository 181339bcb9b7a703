#pragma once

#include <cmath>
#include <cstdint>

namespace vdg {

// splitmix64. Chosen over std engines because the artifact needs the same
// bit stream on every platform and a cheap way to derive independent
// sub-streams from (seed, stream_id) pairs.
inline uint64_t splitmix64_next(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Stateless mix of two 64-bit values into one stream key.
inline uint64_t mix64(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
  return splitmix64_next(s);
}

class RngStream {
 public:
  explicit RngStream(uint64_t seed, uint64_t stream = 0)
      : state_(mix64(seed, stream)) {}

  uint64_t next_u64() { return splitmix64_next(state_); }

  // uniform in [0, 1), 53-bit resolution
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // unbiased integer in [0, n)
  uint64_t below(uint64_t n) {
    if (n <= 1) return 0;
    uint64_t limit = ~uint64_t(0) - (~uint64_t(0) % n);
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Box-Muller with a cached spare
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // logistic noise log(u) - log(1-u); resamples the measure-zero endpoints
  double logistic() {
    double u = uniform01();
    while (u <= 0.0 || u >= 1.0) u = uniform01();
    return std::log(u) - std::log1p(-u);
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <class It>
void shuffle_indices(It begin, It end, RngStream& rng) {
  auto n = static_cast<uint64_t>(end - begin);
  for (uint64_t i = n; i > 1; --i) {
    uint64_t j = rng.below(i);
    std::swap(begin[i - 1], begin[j]);
  }
}

}  // namespace vdg
