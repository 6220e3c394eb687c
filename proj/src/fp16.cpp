#include "ttd/fp16.hpp"

#include <cmath>

namespace ttd {

double fp16_decode(Fp16Bits f) {
  if (!f.is_finite()) throw DomainError("fp16 NaN/Inf pattern rejected");
  const double sign = f.sign() ? -1.0 : 1.0;
  const int e = static_cast<int>(f.exponent());
  const double mant = static_cast<double>(f.mantissa());
  if (e == 0) return sign * std::ldexp(mant, -24);
  return sign * std::ldexp(1024.0 + mant, e - 25);
}

Fp16Encoded fp16_encode_checked(double v) {
  if (std::isnan(v)) throw DomainError("cannot encode NaN as fp16");
  const std::uint16_t sign = std::signbit(v) ? 0x8000 : 0;
  double a = std::fabs(v);

  // Anything at or above the midpoint between 65504 and 65536 would round to Inf.
  if (a >= 65520.0) return {Fp16Bits{static_cast<std::uint16_t>(sign | 0x7BFF)}, true};

  if (a < std::ldexp(1.0, -14)) {
    // Subnormal range: quantum 2^-24. nearbyint under the default mode is RNE.
    const double q = std::nearbyint(std::ldexp(a, 24));
    // q == 1024 promotes to the smallest normal, which the bit layout handles.
    return {Fp16Bits{static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(q))}, false};
  }

  int exp2 = 0;
  std::frexp(a, &exp2);  // a = f * 2^exp2, f in [0.5, 1)
  int e = exp2 - 1;      // a in [2^e, 2^(e+1))
  double q = std::nearbyint(std::ldexp(a, 10 - e));  // in [1024, 2048]
  if (q == 2048.0) {
    q = 1024.0;
    ++e;
  }
  const auto biased = static_cast<std::uint16_t>(e + 15);
  const auto mant = static_cast<std::uint16_t>(q - 1024.0);
  return {Fp16Bits{static_cast<std::uint16_t>(sign | (biased << 10) | mant)}, false};
}

Fp16Bits fp16_encode(double v) { return fp16_encode_checked(v).value; }

double fp16_ulp(double v) {
  const Fp16Bits f = fp16_encode(v);
  const int e = f.exponent() == 0 ? 1 : static_cast<int>(f.exponent());
  return std::ldexp(1.0, e - 25);
}

HalfTensor to_half(const DenseTensor& t) {
  std::vector<Fp16Bits> out(t.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fp16_encode(t[i]);
  return HalfTensor(t.shape(), std::move(out));
}

DenseTensor from_half(const HalfTensor& t) {
  std::vector<double> out(t.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fp16_decode(t[i]);
  return DenseTensor(t.shape(), std::move(out));
}

}  // namespace ttd
