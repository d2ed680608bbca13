#pragma once

#include <cstdint>
#include <random>

namespace patchnet {

// Seeded random source used everywhere reproducibility matters. Draws raw
// mt19937_64 words and derives values by hand instead of going through
// std distributions, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  float uniform_f(float lo, float hi) {
    return static_cast<float>(uniform(lo, hi));
  }

  // Uniform integer in [lo, hi], inclusive.
  long uniform_int(long lo, long hi) {
    return lo + static_cast<long>(next_u64() %
                                  static_cast<std::uint64_t>(hi - lo + 1));
  }

  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(next_u64() % n);
  }

  bool bernoulli(double p) { return uniform() < p; }

  Rng fork(std::uint64_t salt) {
    return Rng(next_u64() ^ (salt * 0x9e3779b97f4a7c15ull));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace patchnet
