// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace scaleflow {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic generator. Distributions are hand-rolled on top of
// mt19937_64 (whose output sequence the standard pins down), so a fixed seed
// gives the same stream on every build. Training derives a fresh stream per
// (seed, step, purpose), which is what makes resume-from-checkpoint replay the
// exact trajectory without serializing generator state.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(splitmix64(seed)) {}

  // Substream for a given step/purpose pair.
  static Rng stream(uint64_t seed, uint64_t a, uint64_t b = 0) {
    return Rng(splitmix64(splitmix64(seed ^ 0x5bf03635f0935ad1ull) + a) ^ splitmix64(b + 0x14d8a3c9f2e0b7d5ull));
  }

  uint64_t bits() { return gen_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  int64_t below(int64_t n) {
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
  }

  // Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double two_pi = 6.283185307179586476925286766559;
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  template <typename T>
  void fill_normal(std::vector<T>& out, double mu = 0.0, double sigma = 1.0) {
    for (auto& x : out) x = static_cast<T>(normal(mu, sigma));
  }

  template <typename T>
  void fill_uniform(std::vector<T>& out, double lo, double hi) {
    for (auto& x : out) x = static_cast<T>(uniform(lo, hi));
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace scaleflow
