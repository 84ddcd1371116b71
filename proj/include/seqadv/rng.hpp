#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace seqadv {

// Deterministic RNG with explicit stream derivation. All randomness in the
// project flows through this class so that runs are reproducible from a
// single seed and independent streams can be handed to parallel workers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(splitmix(seed)) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller, one spare cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Standard Gumbel(0,1): -log(-log(U)) with U clamped away from {0,1}.
  double gumbel() {
    double u = uniform();
    if (u < 1e-10) u = 1e-10;
    if (u > 1.0 - 1e-10) u = 1.0 - 1e-10;
    return -std::log(-std::log(u));
  }

  // Independent derived stream; deterministic in (parent seed, salt).
  Rng child(std::uint64_t salt) const { return Rng(splitmix(seed_ ^ (0x9e3779b97f4a7c15ull + salt))); }

  std::uint64_t seed() const { return seed_; }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace seqadv
