#include "ttd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace ttd {

MantExp to_mant12(Fp16Bits f) {
  if (!f.is_finite()) throw DomainError("to_mant12: NaN/Inf input");
  const unsigned e = f.exponent();
  int magnitude = static_cast<int>(f.mantissa());
  if (e != 0) magnitude += 1024;
  const int value = f.sign() ? -magnitude : magnitude;
  return {Mant12{static_cast<std::int16_t>(value)}, e == 0 ? 1u : e};
}

namespace {

void check_int4(int w) {
  if (w < kInt4Min || w > kInt4Max) {
    throw InvalidArgument("INT4 weight out of range: " + std::to_string(w));
  }
}

}  // namespace

PackedWeightPair::PackedWeightPair(int w_hi, int w_lo)
    : w_hi_(static_cast<std::int8_t>(w_hi)), w_lo_(static_cast<std::int8_t>(w_lo)) {
  check_int4(w_hi);
  check_int4(w_lo);
}

PackedWeightPair PackedWeightPair::unpack(std::int32_t packed) {
  const auto lo = static_cast<std::int16_t>(static_cast<std::uint32_t>(packed) & 0xFFFFu);
  const std::int32_t hi = (packed - lo) / 65536;
  return PackedWeightPair(hi, lo);
}

DspProducts packed_dsp_multiply(Mant12 m, PackedWeightPair pair) {
  // 18-bit port: mantissa; 27-bit port: packed weights; 45-bit product.
  const std::int64_t p = static_cast<std::int64_t>(m.value) * pair.packed();
  const auto raw = static_cast<std::uint64_t>(p);
  const auto lo = static_cast<std::int16_t>(raw & 0xFFFFu);
  auto hi = static_cast<std::int16_t>((raw >> 16) & 0xFFFFu);
  // A negative low product borrowed one from the high field.
  if (lo < 0) hi = static_cast<std::int16_t>(hi + 1);
  return {hi, lo};
}

std::int64_t adder_tree_reduce(std::span<const std::int64_t> values) {
  if (values.empty()) return 0;
  std::size_t width = 1;
  while (width < values.size()) width *= 2;
  std::vector<std::int64_t> level(width, 0);
  std::copy(values.begin(), values.end(), level.begin());

  auto fits = [](std::int64_t v, int bits) {
    const std::int64_t lim = std::int64_t{1} << (bits - 1);
    return v >= -lim && v < lim;
  };
  int bits = kAdderInputBits;
  for (auto v : level) {
    if (!fits(v, bits)) throw OverflowError("adder tree input exceeds 16-bit operand width");
  }
  while (level.size() > 1) {
    ++bits;
    if (bits > kAdderMaxBits) throw OverflowError("adder tree deeper than 32-bit accumulator");
    std::vector<std::int64_t> next(level.size() / 2);
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] = level[2 * i] + level[2 * i + 1];
      if (!fits(next[i], bits)) throw OverflowError("adder tree level overflow");
    }
    level = std::move(next);
  }
  return level[0];
}

std::int64_t align_product(std::int64_t product, unsigned shift) {
  if (shift > 31) return 0;
  return product >> shift;  // arithmetic shift (C++20 defines it for negatives)
}

namespace {

PeResult finish(const std::vector<std::int64_t>& products, const std::vector<unsigned>& exps,
                unsigned e_max, float scale) {
  std::vector<std::int64_t> aligned(products.size());
  for (std::size_t i = 0; i < products.size(); ++i) {
    aligned[i] = align_product(products[i], e_max - exps[i]);
  }
  PeResult r;
  r.e_max = e_max;
  r.accumulator = adder_tree_reduce(aligned);
  // Exact in double: |acc| < 2^32 and the scale carries 24 significant bits.
  r.unrounded = std::ldexp(static_cast<double>(r.accumulator), static_cast<int>(e_max) - 25) *
                static_cast<double>(scale);
  const auto enc = fp16_encode_checked(r.unrounded);
  r.bits = enc.value;
  r.saturated = enc.clamped;
  r.value = fp16_decode(r.bits);
  return r;
}

void check_scale(float scale) {
  if (!(scale > 0.0f) || !std::isfinite(scale)) throw InvalidArgument("PE scale must be positive");
}

}  // namespace

PeResult pe_dot_product_detail(std::span<const Fp16Bits> features,
                               std::span<const std::int8_t> weights, float scale) {
  if (features.size() != weights.size()) {
    throw ShapeError("pe_dot_product: feature/weight length mismatch");
  }
  check_scale(scale);
  std::vector<std::int64_t> products(features.size());
  std::vector<unsigned> exps(features.size());
  unsigned e_max = 1;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto me = to_mant12(features[i]);
    // Single-weight pass: the partner field of the DSP carries zero.
    const auto p = packed_dsp_multiply(me.mant, PackedWeightPair(weights[i], 0));
    products[i] = p.hi;
    exps[i] = me.exponent;
    e_max = std::max(e_max, me.exponent);
  }
  return finish(products, exps, e_max, scale);
}

std::array<PeResult, 2> pe_dual_dot_product(std::span<const Fp16Bits> features,
                                            std::span<const std::int8_t> weights_hi,
                                            std::span<const std::int8_t> weights_lo,
                                            float scale) {
  if (features.size() != weights_hi.size() || features.size() != weights_lo.size()) {
    throw ShapeError("pe_dual_dot_product: feature/weight length mismatch");
  }
  check_scale(scale);
  const std::size_t n = features.size();
  std::vector<std::int64_t> hi(n), lo(n);
  std::vector<unsigned> exps(n);
  unsigned e_max = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const auto me = to_mant12(features[i]);
    const auto p = packed_dsp_multiply(me.mant, PackedWeightPair(weights_hi[i], weights_lo[i]));
    hi[i] = p.hi;
    lo[i] = p.lo;
    exps[i] = me.exponent;
    e_max = std::max(e_max, me.exponent);
  }
  return {finish(hi, exps, e_max, scale), finish(lo, exps, e_max, scale)};
}

}  // namespace ttd
