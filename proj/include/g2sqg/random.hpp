#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace g2s {

/// Seeded generator threaded through every stochastic operation.
///
/// Draws are built from raw 64-bit engine output rather than the standard
/// distributions so sequences do not depend on the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Index drawn from an unnormalized nonnegative weight vector.
  template <typename Scalar>
  std::size_t categorical(std::span<const Scalar> weights) {
    double total = 0;
    for (Scalar w : weights) total += static_cast<double>(w);
    double target = uniform() * total;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0) continue;
      last_positive = i;
      target -= static_cast<double>(weights[i]);
      if (target < 0) return i;
    }
    return last_positive;
  }

  /// Derive an independent child stream (used to give each subsystem its own generator).
  Rng split() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace g2s
