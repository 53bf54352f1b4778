#include "normlab/half.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace normlab {

double round_half(double x) {
  if (std::isnan(x) || std::isinf(x) || x == 0.0) return x;
  const double ax = std::fabs(x);
  if (ax >= kHalfOverflow) {
    return std::copysign(std::numeric_limits<double>::infinity(), x);
  }

  // binary16 ulp for a value in [2^(e-1), 2^e) is 2^(e-11); the subnormal
  // range bottoms out at 2^-24.
  int e = 0;
  std::frexp(ax, &e);
  const int ulp_exp = std::max(e - 11, -24);

  // Scaling by a power of two is exact, so `scaled` is the true ulp count.
  const double scaled = std::ldexp(ax, -ulp_exp);
  double units = std::floor(scaled);
  const double frac = scaled - units;
  if (frac > 0.5 || (frac == 0.5 && std::fmod(units, 2.0) == 1.0)) {
    units += 1.0;
  }
  return std::copysign(std::ldexp(units, ulp_exp), x);
}

bool representable_half(double x) {
  if (std::isnan(x)) return false;
  return round_half(x) == x;
}

}  // namespace normlab
