#pragma once

// Counter-based deterministic random streams. A value depends only on
// (key, counter), never on drawing order, so substreams derived from
// (seed, name) can be consumed independently and in parallel while the
// overall output stays bit-identical run to run.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "repsim/types.hpp"

namespace repsim {

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ull;

// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

inline std::uint64_t derive_key(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = mix64(seed + kGoldenGamma);
  for (char c : name) h = mix64(h ^ static_cast<std::uint8_t>(c));
  return h;
}

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key) : key_(key) {}
  RandomStream(std::uint64_t seed, std::string_view name) : key_(derive_key(seed, name)) {}

  std::uint64_t bits(std::uint64_t i) const { return mix64(key_ + (i + 1) * kGoldenGamma); }

  // Uniform in (0,1]; never 0, so log() in normal() is safe.
  double uniform(std::uint64_t i) const {
    return (static_cast<double>(bits(i) >> 11) + 1.0) * 0x1.0p-53;
  }

  // Box-Muller, one deviate per counter.
  double normal(std::uint64_t i) const {
    const double u1 = uniform(2 * i);
    const double u2 = uniform(2 * i + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Integer in [lo, hi]; bias is negligible for test-sized ranges.
  std::uint64_t uniform_int(std::uint64_t i, std::uint64_t lo, std::uint64_t hi) const {
    return lo + bits(i) % (hi - lo + 1);
  }

  template <typename Scalar = double>
  Matrix<Scalar> gaussian(Index rows, Index cols, std::uint64_t base = 0) const {
    Matrix<Scalar> m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c)
        m(r, c) = static_cast<Scalar>(normal(base + static_cast<std::uint64_t>(r * cols + c)));
    return m;
  }

 private:
  std::uint64_t key_;
};

}  // namespace repsim
