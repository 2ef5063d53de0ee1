#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace mcep {

/// splitmix64; used to derive well-mixed seeds from (seed, label, index) tuples.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// xoshiro256++ engine. Streams derived from (seed, label, index) are
/// statistically independent and identical across platforms and runs.
class Rng {
 public:
  Rng() : Rng(0, "", 0) {}

  Rng(std::uint64_t seed, std::string_view label, std::uint64_t index) {
    std::uint64_t h = seed;
    for (char c : label) h = (h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c))) * 0x100000001b3ULL;
    h ^= index * 0x9e3779b97f4a7c15ULL;
    for (auto& w : s_) w = splitmix64(h);
    have_spare_ = false;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1); 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1); never returns 0, safe for log().
  double next_open() {
    double u = next_double();
    return u > 0.0 ? u : 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; deterministic (no libstdc++ distribution dependence).
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_open();
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    // Rejection sampling keeps the draw exactly uniform.
    std::uint64_t threshold = (0ULL - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Fisher-Yates shuffle, deterministic under this engine.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace mcep
