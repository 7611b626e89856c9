#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dualswin {

/// Seed splitting: every random stream in the pipeline is derived from one root
/// seed as splitmix64(root ^ fnv1a(stream) ^ splitmix64(index)). Streams with
/// different names or indices are decorrelated; the mapping is platform stable.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index = 0);

/// Thin wrapper over std::mt19937_64. Distributions are computed here rather
/// than with <random> distribution objects, whose output is implementation
/// defined, so sampled values are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal();

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dualswin
