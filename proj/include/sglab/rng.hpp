#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sg {

using Engine = std::mt19937_64;

// Purposes of derived streams; appended to the key so different consumers of
// one seed never share draws.
enum class Stream : std::uint64_t {
  prior = 1,
  mask = 2,
  train = 3,
  dataset = 4,
  pairing = 5,
  init = 6,
};

std::uint64_t splitmix64(std::uint64_t x);

// Deterministic child seed for (seed, key...).
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> key);

inline Engine substream(std::uint64_t seed, Stream purpose,
                        std::initializer_list<std::uint64_t> key = {}) {
  std::uint64_t s = derive_seed(seed, {static_cast<std::uint64_t>(purpose)});
  return Engine(derive_seed(s, key));
}

// 53-bit uniform in [0, 1).
inline double uniform01(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double standard_normal(Engine& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace sg
