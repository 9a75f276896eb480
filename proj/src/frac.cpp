#include "frac.hpp"

#include <cmath>
#include <cstdio>

namespace ccdfse {

Frac parse_frac(const std::string& text) {
  size_t slash = text.find('/');
  try {
    if (slash == std::string::npos) return Frac(std::stoll(text), 1);
    return Frac(std::stoll(text.substr(0, slash)), std::stoll(text.substr(slash + 1)));
  } catch (const std::exception&) {
    throw ConfigError("cannot parse rational '" + text + "'");
  }
}

std::string to_string(const Frac& f) {
  char buf[48];
  if (f.den == 1)
    std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(f.num));
  else
    std::snprintf(buf, sizeof(buf), "%lld/%lld", static_cast<long long>(f.num),
                  static_cast<long long>(f.den));
  return buf;
}

Frac frac_from_double(double v) {
  if (!std::isfinite(v)) throw Error("frac_from_double: not finite");
  // Scale by powers of two until integral; dyadic inputs terminate quickly.
  std::int64_t den = 1;
  for (int i = 0; i < 40; ++i) {
    double scaled = v * static_cast<double>(den);
    if (scaled == std::floor(scaled) && std::abs(scaled) < 9e18)
      return Frac(static_cast<std::int64_t>(scaled), den);
    den <<= 1;
  }
  throw Error("frac_from_double: value is not a small dyadic rational");
}

}  // namespace ccdfse
