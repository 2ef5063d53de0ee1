#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcep {

constexpr double kInf = std::numeric_limits<double>::infinity();

class McepError : public std::runtime_error {
 public:
  explicit McepError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw McepError(msg);
}

/// Rounds half away from zero: 0.5 -> 1, -0.5 -> -1, 1.5 -> 2.
inline double round_half_away(double x) { return std::round(x); }

/// Rounds to the nearest integer (half away from zero) and returns it as long long.
inline long long iround(double x) { return static_cast<long long>(std::llround(x)); }

/// Shortest decimal representation that round-trips a double (%.17g).
inline std::string fmt_full(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

template <typename T>
inline T sum(const std::vector<T>& v) {
  T s{};
  for (const T& x : v) s += x;
  return s;
}

/// Dense row-major matrix of doubles, minimal interface.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

}  // namespace mcep
