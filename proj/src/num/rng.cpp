#include "linattn/num/rng.hpp"

#include <cmath>

namespace linattn::num {

namespace {

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(seed_ + counter_ * kGolden);
}

Rng Rng::split(std::string_view label) const {
  return Rng(mix64(seed_ ^ mix64(fnv1a(label))));
}

Rng Rng::split(uint64_t index) const {
  return Rng(mix64(seed_ ^ mix64(index * kGolden + 0x632BE59BD9B4E019ull)));
}

double Rng::next_unit() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * next_unit();
}

double Rng::normal(double mean, double std) {
  // u1 in (0,1] so the log is finite.
  double u1 = 1.0 - next_unit();
  double u2 = next_unit();
  double r = std::sqrt(-2.0 * std::log(u1));
  return mean + std * r * std::cos(2.0 * M_PI * u2);
}

Matrix sample_normal(Rng& rng, int rows, int cols, double std) {
  if (std <= 0.0) throw Error("sample_normal: std must be positive");
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.normal(0.0, std);
  return m;
}

Matrix sample_uniform(Rng& rng, int rows, int cols, double lo, double hi) {
  if (!(lo < hi)) throw Error("sample_uniform: lo must be < hi");
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.uniform(lo, hi);
  return m;
}

}  // namespace linattn::num
