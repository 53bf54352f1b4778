#pragma once

namespace normlab {

// Largest finite binary16 value.
inline constexpr double kHalfMax = 65504.0;

// Overflow threshold under round-to-nearest-even: the midpoint between the
// largest finite binary16 value (65504) and the first non-representable
// power step (65536). Magnitudes at or above it round to infinity.
inline constexpr double kHalfOverflow = 65520.0;

// Smallest positive normal and subnormal binary16 values.
inline constexpr double kHalfMinNormal = 6.103515625e-05;     // 2^-14
inline constexpr double kHalfMinSubnormal = 5.9604644775390625e-08;  // 2^-24

// Round a double to the nearest IEEE 754 binary16 value using
// round-to-nearest-even. Infinities and NaN pass through, signed zero is
// preserved, subnormals are kept. Total function.
double round_half(double x);

// True if x is exactly representable as binary16 (infinities yes, NaN no).
bool representable_half(double x);

// Round through binary32. Used for the F32 element mode and for the wide
// accumulator of Half reductions.
inline double round_float(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace normlab
