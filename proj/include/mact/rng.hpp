#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>

#include "mact/common.hpp"

namespace mact {

// splitmix64 finalizer; used for seed derivation and the deterministic
// mock-oracle draws.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  return mix64(mix64(a) ^ b);
}

inline std::uint64_t hash_str(std::string_view s) {
  // FNV-1a, folded through mix64.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return mix64(h);
}

// Deterministic RNG stream. All randomness in the project flows through
// this wrapper so runs are reproducible bit-for-bit: mt19937_64 output is
// specified by the standard and doubles are derived from raw bits rather
// than through distribution objects (whose sequences are
// implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(mix64(seed)) {}
  Rng(std::uint64_t seed, std::uint64_t stream) : gen_(mix64(seed, stream)) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi] via rejection-free Lemire-style reduction
  // is overkill here; modulo bias is negligible for the small ranges used.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    return lo + gen_() % (hi - lo + 1);
  }

  // Standard normal via Box-Muller on raw uniform bits.
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Samples an index from an (unnormalized is fine) probability vector.
  std::size_t categorical(std::span<const double> probs) {
    double total = 0.0;
    for (double p : probs) total += p;
    if (!(total > 0.0)) throw NumericalError("categorical: zero-mass vector");
    double u = uniform01() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return probs.size() - 1;
  }

  // Sub-stream derivation, so components can draw independently.
  Rng fork(std::uint64_t tag) { return Rng(gen_(), tag); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace mact
