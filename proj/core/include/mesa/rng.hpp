#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace mesa {

// One splitmix64 step: advances `state` and returns the next output.
std::uint64_t splitmix64(std::uint64_t& state);

// Derives an independent stream seed from a root seed and a label such as
// "phase1" or "collect/train3". Same (root, label) always gives the same
// seed; distinct labels give (practically) uncorrelated streams.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

// Deterministic random source. mt19937_64 output is pinned by the standard
// and the samplers below avoid std::*_distribution, whose output is
// implementation-defined; identical seeds therefore give identical streams
// on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard Box-Muller (no cached spare, two u64 draws per sample).
  double normal(double mean, double stddev);

  // Uniform integer in [0, n). n must be > 0.
  std::size_t index(std::size_t n);

  // k distinct indices drawn from [0, n), in draw order. k <= n.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 gen_;
};

}  // namespace mesa
