#pragma once

// Portable seeded random source.
//
// Bits come from std::mt19937_64, whose output sequence is fixed by the
// standard. The std:: distributions are implementation-defined, so the
// conversions below are spelled out:
//   uniform()  = (bits >> 11) * 2^-53                  in [0, 1)
//   normal()   = Box-Muller on two uniforms, cosine branch only
//   below(n)   = floor(uniform() * n)

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace seqdiou {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  std::uint64_t below(std::uint64_t n) {
    const auto k = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace seqdiou
