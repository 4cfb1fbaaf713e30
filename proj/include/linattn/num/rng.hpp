#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "linattn/num/matrix.hpp"

namespace linattn::num {

// Counter-based SplitMix64 generator. The output stream is a pure function
// of (seed, counter), so identical (seed, call sequence) pairs produce
// identical values on every platform. Sub-streams are derived by hashing a
// label into a fresh seed, which keeps parallel data generation reproducible.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "splitmix64";

  explicit Rng(uint64_t seed) : seed_(seed), counter_(0) {}

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }

  // Derived generator for an independent named stream.
  Rng split(std::string_view label) const;
  Rng split(uint64_t index) const;

  uint64_t next_u64();

  // Uniform in [0, 1) with 53 bits of mantissa.
  double next_unit();

  double uniform(double lo, double hi);

  // Box-Muller on the counter stream; consumes two uniforms per sample.
  double normal(double mean = 0.0, double std = 1.0);

 private:
  uint64_t seed_;
  uint64_t counter_;
};

Matrix sample_normal(Rng& rng, int rows, int cols, double std);
Matrix sample_uniform(Rng& rng, int rows, int cols, double lo, double hi);

}  // namespace linattn::num
