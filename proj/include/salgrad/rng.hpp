#pragma once

#include <cstdint>
#include <random>

namespace salgrad {

// splitmix64 finalizer; used to derive independent seeds from (seed, tag) pairs.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return mix_seed(a ^ mix_seed(b));
}

// Deterministic random source. Draws are defined directly on top of the
// mt19937_64 output stream rather than std:: distributions, whose exact
// sequences are implementation-defined; seeded runs must reproduce
// byte-identical artifacts.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + uniform01() * (hi - lo); }

  float uniform_float(float lo, float hi) {
    return static_cast<float>(uniform(lo, hi));
  }

  // Uniform integer in [0, n); n > 0. Fixed-point multiply keeps the mapping
  // platform-independent.
  std::int64_t below(std::int64_t n) {
    const auto wide = static_cast<unsigned __int128>(next_u64());
    return static_cast<std::int64_t>(
        (wide * static_cast<unsigned __int128>(n)) >> 64);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace salgrad
