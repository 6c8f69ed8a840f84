#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace tdtd {

// Seeded generator with distribution code written out by hand, so streams are
// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n) {
    auto idx = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return idx < n ? idx : n - 1;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Draws an index proportional to `weights`. Weights need not be normalized.
  std::size_t categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double r = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (r < acc) return i;
    }
    // Round-off: fall back to the last positive weight.
    for (std::size_t i = weights.size(); i-- > 0;) {
      if (weights[i] > 0.0) return i;
    }
    return 0;
  }

  // Derives an independent child seed; used to split streams deterministically.
  std::uint64_t fork() { return engine_() ^ 0x9e3779b97f4a7c15ULL; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace tdtd
