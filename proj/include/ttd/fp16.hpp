#pragma once

#include <cstdint>
#include <vector>

#include "ttd/tensor.hpp"

namespace ttd {

/// IEEE binary16 bit pattern: 1 sign bit, 5 exponent bits (bias 15), 10 mantissa bits.
struct Fp16Bits {
  std::uint16_t bits = 0;

  constexpr unsigned sign() const noexcept { return bits >> 15; }
  constexpr unsigned exponent() const noexcept { return (bits >> 10) & 0x1F; }
  constexpr unsigned mantissa() const noexcept { return bits & 0x3FF; }
  constexpr bool is_finite() const noexcept { return exponent() != 0x1F; }

  friend constexpr bool operator==(Fp16Bits, Fp16Bits) = default;
};

inline constexpr double kFp16Max = 65504.0;

/// Decode to a real. NaN and Inf patterns are rejected with DomainError.
double fp16_decode(Fp16Bits f);

struct Fp16Encoded {
  Fp16Bits value;
  bool clamped = false;  ///< input exceeded the finite range and was clamped to +-65504
};

/// Round-to-nearest-even encode. NaN throws DomainError; magnitudes that would
/// round past 65504 (including infinities) clamp to +-65504 with the flag set.
Fp16Encoded fp16_encode_checked(double v);
Fp16Bits fp16_encode(double v);

/// Round a real to the nearest fp16 value and return it as a real.
inline double fp16_round(double v) { return fp16_decode(fp16_encode(v)); }

/// Unit in the last place of the fp16 value nearest to `v` (used for error budgets).
double fp16_ulp(double v);

using HalfTensor = BasicTensor<Fp16Bits>;

HalfTensor to_half(const DenseTensor& t);
DenseTensor from_half(const HalfTensor& t);

}  // namespace ttd
