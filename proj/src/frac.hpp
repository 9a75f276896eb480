#pragma once

#include <array>
#include <cstdint>
#include <numeric>

#include "common.hpp"

namespace ccdfse {

// Exact rational used for fractional k-point coordinates. Mesh closure and
// on-mesh lookups are decided with this type, never with tolerances.
struct Frac {
  std::int64_t num = 0;
  std::int64_t den = 1;

  constexpr Frac() = default;
  Frac(std::int64_t n, std::int64_t d) : num(n), den(d) { normalize(); }
  static Frac of(std::int64_t n) { return Frac(n, 1); }

  void normalize() {
    if (den == 0) throw Error("Frac: zero denominator");
    if (den < 0) {
      den = -den;
      num = -num;
    }
    std::int64_t g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }

  Frac operator+(const Frac& o) const { return Frac(num * o.den + o.num * den, den * o.den); }
  Frac operator-(const Frac& o) const { return Frac(num * o.den - o.num * den, den * o.den); }
  Frac operator-() const { return Frac(-num, den); }
  Frac operator*(const Frac& o) const { return Frac(num * o.num, den * o.den); }
  bool operator==(const Frac& o) const { return num == o.num && den == o.den; }
  bool operator!=(const Frac& o) const { return !(*this == o); }
  bool operator<(const Frac& o) const { return num * o.den < o.num * den; }

  bool is_integer() const { return den == 1; }

  // Floor of the rational value.
  std::int64_t floor() const {
    std::int64_t q = num / den;
    if (num % den != 0 && num < 0) --q;
    return q;
  }

  // Splits into (fractional part in [0,1), integer shift): *this = frac + shift.
  Frac mod1(std::int64_t* shift = nullptr) const {
    std::int64_t f = floor();
    if (shift) *shift = f;
    return Frac(num - f * den, den);
  }
};

using Frac3 = std::array<Frac, 3>;

inline Frac3 operator+(const Frac3& a, const Frac3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Frac3 operator-(const Frac3& a, const Frac3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline bool operator==(const Frac3& a, const Frac3& b) {
  return a[0] == b[0] && a[1] == b[1] && a[2] == b[2];
}

// "p/q" or "p".
Frac parse_frac(const std::string& text);
std::string to_string(const Frac& f);

// Exact conversion of a dyadic double (probe coordinates are dyadic by
// construction); throws for non-representable values.
Frac frac_from_double(double v);

struct Frac3Hash {
  size_t operator()(const Frac3& f) const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& c : f) {
      for (std::uint64_t v : {static_cast<std::uint64_t>(c.num), static_cast<std::uint64_t>(c.den)}) {
        h ^= v;
        h *= 1099511628211ull;
      }
    }
    return static_cast<size_t>(h);
  }
};

}  // namespace ccdfse
