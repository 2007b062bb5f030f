#pragma once

#include <cstdint>

namespace qdt::nn {

// Counter-based deterministic generator (SplitMix64). The n-th output is a
// pure function of (seed, n), so streams can be forked cheaply and runs are
// reproducible across platforms. See docs/MANUAL.md for the exact definition.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Derives an independent stream from (seed, stream). Different streams
  // never share outputs in practice.
  static Rng fork(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();

  // Uniform in [0, 1), 53-bit resolution.
  double uniform();

  // Standard normal via Box-Muller (two uniforms per draw, no cached spare).
  double normal();

  // N(0, sigma^2) resampled until |x| <= clip_sigmas * sigma.
  double truncated_normal(double sigma, double clip_sigmas = 2.0);

  // Uniform integer in [0, n). n must be >= 1.
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t state_;
};

// SplitMix64 finalizer, exposed for seed derivation elsewhere.
std::uint64_t mix64(std::uint64_t x);

}  // namespace qdt::nn
