#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "rrt/errors.hpp"

// Q15.16 storage codec: one 32-bit two's-complement word per parameter,
// bit 31 = sign, bits 30..16 = integer, bits 15..0 = fraction. Inference
// arithmetic stays in floating point; this encoding only defines the bit
// pattern that faults are injected into.

namespace rrt {

/// A parameter's 32-bit Q15.16 memory image.
struct FixedCode {
  std::uint32_t bits = 0;
  friend bool operator==(const FixedCode&, const FixedCode&) = default;
};

inline constexpr double kQ15_16Resolution = 1.0 / 65536.0;
inline constexpr double kQ15_16Min = -32768.0;
inline constexpr double kQ15_16Max = 32768.0 - kQ15_16Resolution;

/// Nearest-representable encoding with ties to even; out-of-range values
/// saturate to the range endpoints so corrupted reals can always be re-encoded.
inline FixedCode encode_q15_16(double x) {
  if (!std::isfinite(x)) throw value_error("encode_q15_16: non-finite input");
  // Power-of-two scaling is exact, so the tie test below is exact too.
  const double scaled = x * 65536.0;
  if (scaled >= 2147483647.0) return {0x7FFFFFFFu};
  if (scaled <= -2147483648.0) return {0x80000000u};
  double rounded = std::floor(scaled);
  const double frac = scaled - rounded;
  if (frac > 0.5 || (frac == 0.5 && std::fmod(rounded, 2.0) != 0.0)) {
    rounded += 1.0;
  }
  return {static_cast<std::uint32_t>(static_cast<std::int32_t>(rounded))};
}

/// Exact inverse: signed(word) / 2^16.
inline double decode_q15_16(FixedCode c) {
  return static_cast<double>(static_cast<std::int32_t>(c.bits)) / 65536.0;
}

/// Toggles exactly bit `bit` (0 = LSB of the fraction, 31 = sign).
inline FixedCode flip_bit(FixedCode c, unsigned bit) {
  if (bit > 31) throw std::out_of_range("flip_bit: bit index > 31");
  return {c.bits ^ (std::uint32_t{1} << bit)};
}

}  // namespace rrt
