#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace faultnet {

// All randomness in the engine flows through this wrapper. The mt19937_64
// engine is fully specified by the standard and every transform below is
// hand-rolled, so a seed pins the exact draw sequence independent of the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1), 53 bits of resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in (0, 1]; safe as the argument of log or a negative power.
  double uniform_open0() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t bounded(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// +1 or -1 with equal probability.
  int sign() { return bounded(2) == 0 ? 1 : -1; }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double gaussian() {
    const double u1 = uniform_open0();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::mt19937_64 engine_;
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Collapses (base, path...) into one well-mixed 64-bit seed. Used to carve
/// independent substreams out of one named seed, e.g. per epoch or per trial.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t state = base;
  std::uint64_t out = splitmix64(state);
  for (std::uint64_t p : path) {
    state ^= p + 0x9E3779B97F4A7C15ull + (state << 6) + (state >> 2);
    out = splitmix64(state);
  }
  return out;
}

inline Rng derive_rng(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(base, path));
}

/// The four independent seed streams of one experiment. Keeping them apart
/// means fault sampling cannot perturb weight init or the data pipeline.
struct SeedSet {
  std::uint64_t init = 1;
  std::uint64_t augment = 2;
  std::uint64_t fault = 3;
  std::uint64_t campaign = 4;
};

}  // namespace faultnet
