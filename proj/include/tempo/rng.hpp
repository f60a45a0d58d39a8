#ifndef TEMPO_RNG_HPP_
#define TEMPO_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <random>

namespace tempo {

// Deterministic random stream. All distribution mapping is done here from
// raw engine output, so results are bit-identical across platforms and
// standard-library versions (std::uniform_*_distribution makes no such
// guarantee).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Unbiased uniform integer in [0, n). Rejection sampling on the top range.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller. Consumes two uniforms per call; the
  // spare is discarded to keep the stream state a pure function of call count.
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  // Independent child stream. Forking advances this stream by one draw.
  Rng fork() { return Rng(next_u64()); }

 private:
  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
};

}  // namespace tempo

#endif  // TEMPO_RNG_HPP_
