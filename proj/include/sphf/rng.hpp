#pragma once

#include <cstdint>

namespace sphf {

// SplitMix64 finaliser; used as a counter-based stream so every (seed, stream,
// index) triple has its own value regardless of evaluation order.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(mix64(seed) ^ a) ^ b);
}

// Uniform in [0, 1).
constexpr double uniform01(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return static_cast<double>(hash_combine(seed, a, b) >> 11) * 0x1.0p-53;
}

}  // namespace sphf
