// Seeded random streams and deterministic seed derivation.
//
// Every randomized stage in the library draws from an Rng seeded through
// derive_seed(master, {stream ids...}). Derivation is purely arithmetic, so a
// sub-computation (one bootstrap replicate, one randomization draw) can be
// reproduced in isolation and results never depend on thread scheduling.

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace rsate {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// derive_seed(m, {a, b}) == derive_seed(derive_seed(m, {a}), {b}), so stages
// may derive incrementally or all at once.
inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> path) {
  for (std::uint64_t id : path) {
    seed = splitmix64(seed ^ splitmix64(id ^ 0xa0761d6478bd642fULL));
  }
  return seed;
}

// Stream ids for the named derivation paths (documented in README).
namespace streams {
constexpr std::uint64_t kFolds = 1;
constexpr std::uint64_t kBootstrap = 2;
constexpr std::uint64_t kFrtDraw = 3;
constexpr std::uint64_t kDgp = 4;
constexpr std::uint64_t kReplicate = 5;
constexpr std::uint64_t kConformal = 6;
constexpr std::uint64_t kCsb = 7;
constexpr std::uint64_t kFrt = 8;
constexpr std::uint64_t kScenario = 9;
constexpr std::uint64_t kOracle = 10;
}  // namespace streams

// mt19937_64 output is fully specified by the standard; the distributions
// below are hand-rolled because the standard library's are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Uniform integer on [0, n), rejection sampled (no modulo bias).
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t bound = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = engine_();
    while (v >= bound) v = engine_();
    return v % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_int(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rsate
