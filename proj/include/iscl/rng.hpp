#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "iscl/common.hpp"

namespace iscl {

// Deterministic counter-free PCG32 stream. We roll our own instead of
// <random> so draws are bit-identical across platforms and standard-library
// versions; every stochastic result in the project flows through this.
class RngStream {
 public:
  explicit RngStream(uint64_t seed, uint64_t stream = 0)
      : inc_((stream << 1u) | 1u) {
    state_ = 0u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  // Named substream derivation: changing one stage's stream never perturbs
  // the others.
  static RngStream derive(uint64_t seed, const std::string& purpose,
                          uint64_t a = 0, uint64_t b = 0) {
    uint64_t h = hash_str(purpose);
    h = hash_combine(h, a);
    h = hash_combine(h, b);
    return RngStream(seed, h);
  }

  uint32_t next_u32() {
    uint64_t old = state_;
    state_ = old * 6364136223846793005ull + inc_;
    uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  uint64_t next_u64() {
    return (static_cast<uint64_t>(next_u32()) << 32) | next_u32();
  }

  // Uniform in [0, 1) with 32-bit resolution.
  double uniform() { return next_u32() * (1.0 / 4294967296.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n > 0. Rejection-free modulo bias is
  // negligible for our n (image counts, offsets) but we debias anyway.
  uint64_t uniform_index(uint64_t n) {
    require(n > 0, ErrorCategory::Argument, "uniform_index: n must be > 0");
    uint64_t threshold = (0ull - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller (pair cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Poisson count via exponential interarrivals; exact and O(lambda),
  // plenty for blob counts over a single image.
  int64_t poisson(double lambda) {
    require(lambda >= 0.0, ErrorCategory::Argument, "poisson: lambda must be >= 0");
    int64_t count = 0;
    double acc = 0.0;
    for (;;) {
      double u;
      do {
        u = uniform();
      } while (u <= 1e-300);
      acc += -std::log(u);
      if (acc > lambda) break;
      ++count;
    }
    return count;
  }

 private:
  uint64_t state_ = 0;
  uint64_t inc_ = 1;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace iscl
