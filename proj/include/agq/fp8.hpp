#pragma once

#include <cfenv>
#include <cmath>
#include <cstdint>
#include <limits>

namespace agq {

// E4M3: 1 sign, 4 exponent (bias 7), 3 mantissa bits. No infinities; the
// all-ones exponent with all-ones mantissa is NaN, so the max finite
// magnitude is 1.75 * 2^8 = 448. Encoding rounds to nearest, ties to even,
// and saturates to +-448 past the finite range.
struct Fp8Value {
  std::uint8_t byte = 0;
  friend bool operator==(Fp8Value a, Fp8Value b) { return a.byte == b.byte; }
};

namespace fp8 {
constexpr double kMaxFinite = 448.0;
constexpr double kMinSubnormal = 0x1p-9;  // mantissa quantum at exponent 0
constexpr double kMinNormal = 0x1p-6;
constexpr std::uint8_t kNaNByte = 0x7f;
constexpr std::uint8_t kMaxFiniteByte = 0x7e;
}  // namespace fp8

struct Fp8EncodeResult {
  Fp8Value value;
  bool overflow = false;  // |v| exceeded the finite range and was saturated
};

inline Fp8EncodeResult fp8_encode(double v) {
  if (std::isnan(v)) {
    std::uint8_t sign = std::signbit(v) ? 0x80 : 0x00;
    return {Fp8Value{static_cast<std::uint8_t>(sign | fp8::kNaNByte)}, false};
  }
  const std::uint8_t sign = std::signbit(v) ? 0x80 : 0x00;
  const double a = std::fabs(v);
  if (a > fp8::kMaxFinite) {
    return {Fp8Value{static_cast<std::uint8_t>(sign | fp8::kMaxFiniteByte)},
            true};
  }
  if (a < fp8::kMinNormal) {
    // Subnormal range: uniform quantum 2^-9. nearbyint under the default
    // rounding mode is round-to-nearest-even, and a/2^-9 is exact.
    const int q = static_cast<int>(std::nearbyint(a * 0x1p9));
    if (q == 0) return {Fp8Value{sign}, false};
    if (q < 8)
      return {Fp8Value{static_cast<std::uint8_t>(sign | q)}, false};
    // Rounded up to the smallest normal.
    return {Fp8Value{static_cast<std::uint8_t>(sign | (1 << 3))}, false};
  }
  int exp = std::ilogb(a);  // value = m * 2^exp with m in [1, 2)
  // Significand on the 3-bit grid: q = RNE(a / 2^(exp-3)), in [8, 16].
  int q = static_cast<int>(std::nearbyint(std::ldexp(a, 3 - exp)));
  if (q == 16) {
    q = 8;
    ++exp;
  }
  // a <= 448 guarantees exp <= 8 and (exp == 8 implies q <= 14), so the NaN
  // pattern is never produced here.
  const std::uint8_t exp_field = static_cast<std::uint8_t>(exp + 7);
  const std::uint8_t mant = static_cast<std::uint8_t>(q - 8);
  return {Fp8Value{static_cast<std::uint8_t>(sign | (exp_field << 3) | mant)},
          false};
}

inline double fp8_decode(Fp8Value b) {
  const bool sign = (b.byte & 0x80) != 0;
  const int exp_field = (b.byte >> 3) & 0xf;
  const int mant = b.byte & 0x7;
  if (exp_field == 0xf && mant == 0x7) {
    // Keep the sign so encode(decode(b)) == b for both NaN patterns.
    return std::copysign(std::numeric_limits<double>::quiet_NaN(),
                         sign ? -1.0 : 1.0);
  }
  double mag;
  if (exp_field == 0) {
    mag = mant * fp8::kMinSubnormal;
  } else {
    mag = std::ldexp(8 + mant, exp_field - 10);
  }
  return sign ? -mag : mag;
}

// E2M1: 1 sign, 2 exponent, 1 mantissa bit. Magnitudes, indexed by the low
// three bits: {0, 0.5, 1, 1.5, 2, 3, 4, 6}.
namespace fp4 {
constexpr double kMaxFinite = 6.0;
inline constexpr double kMagnitude[8] = {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0};
}  // namespace fp4

// Nearest representable E2M1 value, ties to the even code.
inline std::uint8_t fp4_encode(double v) {
  const std::uint8_t sign = std::signbit(v) ? 0x8 : 0x0;
  const double a = std::fabs(v);
  if (a >= fp4::kMaxFinite) return sign | 0x7;
  int best = 0;
  double best_dist = a;
  for (int i = 1; i < 8; ++i) {
    const double d = std::fabs(a - fp4::kMagnitude[i]);
    if (d < best_dist || (d == best_dist && (i % 2 == 0))) {
      best_dist = d;
      best = i;
    }
  }
  if (best == 0) return 0;  // -0 normalizes to +0
  return sign | static_cast<std::uint8_t>(best);
}

inline double fp4_decode(std::uint8_t code) {
  const double mag = fp4::kMagnitude[code & 0x7];
  return (code & 0x8) ? -mag : mag;
}

}  // namespace agq
