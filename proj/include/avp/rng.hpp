// SPDX-License-Identifier: Apache-2.0
//
// Seeded random streams. std:: distributions are implementation-defined,
// so every draw that must be reproducible across toolchains is generated
// here from raw mt19937_64 output.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace avp {

// splitmix64 finalizer, used to mix seeds and tags into independent streams.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a 64-bit.
inline std::uint64_t hash_bytes(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Engine for the sub-stream identified by (seed, stream, a, b).
inline std::mt19937_64 make_engine(std::uint64_t seed, std::string_view stream,
                                   std::uint64_t a = 0, std::uint64_t b = 0) {
  return std::mt19937_64(mix64(seed ^ mix64(hash_bytes(stream) ^ mix64(a ^ mix64(b)))));
}

// Uniform draw in (0, 1].
inline double uniform_unit(std::mt19937_64& eng) {
  return static_cast<double>((eng() >> 11) + 1) * 0x1.0p-53;
}

inline double uniform_real(std::mt19937_64& eng, double lo, double hi) {
  return lo + (hi - lo) * uniform_unit(eng);
}

// Standard normal via Box-Muller.
inline double normal(std::mt19937_64& eng) {
  const double u1 = uniform_unit(eng);
  const double u2 = uniform_unit(eng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Uniform integer in [0, n). Modulo bias is negligible for desk-scale n.
inline std::uint64_t bounded(std::mt19937_64& eng, std::uint64_t n) {
  return eng() % n;
}

template <typename T>
void shuffle_inplace(std::vector<T>& v, std::mt19937_64& eng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[bounded(eng, i)]);
  }
}

}  // namespace avp
