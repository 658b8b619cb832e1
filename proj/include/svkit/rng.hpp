#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace svkit {

// Deterministic RNG. The engine is mt19937_64; the distributions are spelled
// out here because the std:: distribution objects are implementation-defined
// and would break bit-reproducibility of checkpoints across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed), seed_hash_(mix(seed)) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() {
    return (engine_() >> 11) * (1.0 / 9007199254740992.0);  // 53-bit mantissa
  }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_index(uint64_t n) {
    // rejection sampling to avoid modulo bias
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  // standard normal via Box-Muller (no cached second value, keeps replay simple)
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      size_t j = uniform_index(i + 1);
      std::swap(v[i], v[j]);
    }
  }

  // derive an independent stream, e.g. one per work item, so parallel
  // consumers stay deterministic regardless of scheduling
  Rng fork(uint64_t tag) const {
    uint64_t h = mix(seed_hash_ ^ mix(tag));
    Rng r(h);
    r.seed_hash_ = h;
    return r;
  }

  static uint64_t mix(uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 engine_;
  uint64_t seed_hash_;
};

}  // namespace svkit
