#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace safenet {

// Seeded generator whose derived distributions are computed here rather than
// by <random>'s implementation-defined distribution classes, so a seed yields
// the same stream on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  // Independent stream for (seed, salt) pairs such as (cohort seed, subject).
  Rng(std::uint64_t seed, std::uint64_t salt);

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller.
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace safenet
