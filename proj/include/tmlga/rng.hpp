// SPDX-License-Identifier: Apache-2.0
//
// Counter-based pseudo-random generator. Every draw is splitmix64's output
// function evaluated at (seed + position * gamma), so the whole stream is a
// pure function of the two stored 64-bit integers: streams can be copied,
// resumed from a checkpoint, or forked into independent sub-streams, and the
// byte-identical sequence is reproduced on any platform.

#pragma once

#include <cmath>
#include <cstdint>

namespace tmlga {

struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t position = 0;

  friend bool operator==(const RngState&, const RngState&) = default;
};

namespace detail {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

inline std::uint64_t next_u64(RngState& rng) {
  ++rng.position;
  return detail::mix64(rng.seed + rng.position * detail::kGamma);
}

// Uniform in [0, 1) with 53 random mantissa bits.
inline double next_double(RngState& rng) {
  return static_cast<double>(next_u64(rng) >> 11) * 0x1.0p-53;
}

inline double uniform(RngState& rng, double lo, double hi) {
  return lo + (hi - lo) * next_double(rng);
}

// Uniform integer in [0, bound) via the multiply-shift reduction.
// Consumes exactly one draw; bound must be nonzero.
inline std::uint64_t next_below(RngState& rng, std::uint64_t bound) {
  using u128 = unsigned __int128;
  return static_cast<std::uint64_t>((static_cast<u128>(next_u64(rng)) * bound) >> 64);
}

// Standard normal via Box-Muller; consumes exactly two draws.
inline double gaussian(RngState& rng) {
  double u1 = next_double(rng);
  double u2 = next_double(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
}

// Independent sub-stream keyed by (seed, key). Used to split a master seed
// into parameter-init, data-order, and embedding-init streams.
inline RngState fork(std::uint64_t seed, std::uint64_t key) {
  return RngState{detail::mix64(seed ^ detail::mix64(key + detail::kGamma)), 0};
}

}  // namespace tmlga
