// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace entprop {

using Rng = std::mt19937_64;

/// Independent generator for a named purpose ("init", "shuffle", "mixup", "attack", ...).
/// Extra keys (epoch, sample index) extend the seed sequence.
inline Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t key_a = 0, std::uint64_t key_b = 0) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(key_a), static_cast<std::uint32_t>(key_a >> 32),
                    static_cast<std::uint32_t>(key_b), static_cast<std::uint32_t>(key_b >> 32)};
  return Rng(seq);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double sample_beta(Rng& rng, double a, double b) {
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  if (x + y == 0.0) return 0.5;
  return x / (x + y);
}

}  // namespace entprop
