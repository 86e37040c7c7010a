// Deterministic random numbers. splitmix64 core with explicit uniform and
// Box-Muller normal draws so streams are reproducible independent of the
// standard library implementation.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "u2k/common.hpp"

namespace u2k {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  // standard normal via Box-Muller; one draw per call, cached pair discarded
  // to keep the stream position predictable.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Independent substream for a named component; insensitive to call order
  // elsewhere on the parent.
  Rng fork(const std::string& tag) const {
    std::uint64_t h = fnv1a(tag);
    return Rng(state_ ^ (h | 1ull) ^ 0x6a09e667f3bcc909ull);
  }

  Rng fork(std::uint64_t idx) const { return fork("#" + std::to_string(idx)); }

 private:
  std::uint64_t state_;
};

}  // namespace u2k
