#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace safe_mpc {

// Counter-based normal generator. Every draw is a pure function of its key, so
// samples can be generated on any worker in any order.

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return splitmix64(h ^ splitmix64(v));
}

/// Stream of standard normals keyed by (seed, iteration, sample, timestep).
class CounterNormal {
 public:
  CounterNormal(std::uint64_t seed, std::uint64_t iteration, std::uint64_t sample,
                std::uint64_t timestep)
      : state_(hash_combine(hash_combine(hash_combine(splitmix64(seed), iteration), sample),
                            timestep)) {}

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // Box-Muller on two 53-bit uniforms; u1 is kept strictly positive.
    const double u1 = (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = static_cast<double>(next() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return splitmix64(state_);
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace safe_mpc
