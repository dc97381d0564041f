#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace gradnet {

/// Mixes a tuple of integers (seed, layer, epoch, batch, ...) into one seed.
/// Distinct tuples give statistically independent streams.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

/// Seeded random stream. Distributions are computed here rather than with
/// <random> distribution objects so sequences do not depend on the standard
/// library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::initializer_list<std::uint64_t> parts) : engine_(derive_seed(parts)) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal (Box-Muller).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace gradnet
