#include "qdt/rng.hpp"

#include <cmath>

namespace qdt::nn {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
constexpr double kTwoPi = 6.283185307179586476925286766559;
}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

Rng Rng::fork(std::uint64_t seed, std::uint64_t stream) {
  return Rng(mix64(seed ^ mix64(stream ^ 0xD6E8FEB86659FD93ULL)));
}

std::uint64_t Rng::next_u64() {
  state_ += kGolden;
  return mix64(state_);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // 1 - u keeps the log argument strictly positive.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

double Rng::truncated_normal(double sigma, double clip_sigmas) {
  const double clip = clip_sigmas * sigma;
  for (;;) {
    const double x = sigma * normal();
    if (x >= -clip && x <= clip) return x;
  }
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection sampling over the largest multiple of n that fits in 64 bits.
  const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r < limit) return r % n;
  }
}

}  // namespace qdt::nn
