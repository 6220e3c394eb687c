#pragma once

// Bit-exact model of the FP16 x INT4 DSP-shared vector PE.
//
// Pipeline per PE pass:
//   1. split each fp16 feature into sign/exponent/mantissa and form the 12-bit
//      two's complement {sign, hidden, mantissa};
//   2. multiply that mantissa by two INT4 weights at once in one 27x18 DSP;
//   3. compare exponents and right-shift every product to the maximum exponent;
//   4. reduce in a balanced adder tree;
//   5. multiply by 2^(e_max - 25) and the per-core scale, round once to fp16.

#include <array>
#include <cstdint>
#include <span>

#include "ttd/fp16.hpp"
#include "ttd/tensor.hpp"

namespace ttd {

inline constexpr int kInt4Min = -8;
inline constexpr int kInt4Max = 7;

using Int4Tensor = BasicTensor<std::int8_t>;

/// INT4-valued weights plus one symmetric dequantization scale.
struct QuantCore {
  Int4Tensor values;
  float scale = 1.0f;
};

/// Signed 12-bit two's complement of {sign, hidden bit, mantissa}.
struct Mant12 {
  std::int16_t value = 0;
};

struct MantExp {
  Mant12 mant;
  unsigned exponent = 0;  ///< effective exponent; subnormals and zero report 1
};

/// Finite inputs only (DomainError otherwise).
MantExp to_mant12(Fp16Bits f);

/// Two INT4 weights sharing one 27-bit DSP operand: (w_hi << 16) + sext(w_lo).
class PackedWeightPair {
 public:
  PackedWeightPair(int w_hi, int w_lo);

  static PackedWeightPair unpack(std::int32_t packed);

  std::int32_t packed() const noexcept {
    return static_cast<std::int32_t>(w_hi_) * 65536 + static_cast<std::int32_t>(w_lo_);
  }
  int w_hi() const noexcept { return w_hi_; }
  int w_lo() const noexcept { return w_lo_; }

 private:
  std::int8_t w_hi_;
  std::int8_t w_lo_;
};

struct DspProducts {
  std::int16_t hi = 0;
  std::int16_t lo = 0;
};

/// One wide multiply, two signed 16-bit products recovered from the output.
DspProducts packed_dsp_multiply(Mant12 m, PackedWeightPair pair);

inline constexpr int kAdderInputBits = 16;
inline constexpr int kAdderMaxBits = 32;

/// Balanced pairwise reduction, zero-padded to a power of two. Each level is
/// modeled one bit wider than the previous; a value that does not fit its
/// modeled width (or a tree deeper than 32 bits) raises OverflowError.
std::int64_t adder_tree_reduce(std::span<const std::int64_t> values);

/// Everything observable at the PE output for one accumulation.
struct PeResult {
  Fp16Bits bits;
  double value = 0.0;          ///< decoded fp16 result
  double unrounded = 0.0;      ///< accumulator * 2^(e_max-25) * scale before fp16 rounding
  std::int64_t accumulator = 0;
  unsigned e_max = 1;
  bool saturated = false;      ///< fp16 range exceeded, clamped
};

/// Arithmetic shift used for exponent alignment; shifts beyond 31 flush to zero.
std::int64_t align_product(std::int64_t product, unsigned shift);

PeResult pe_dot_product_detail(std::span<const Fp16Bits> features,
                               std::span<const std::int8_t> weights, float scale);

inline double pe_dot_product(std::span<const Fp16Bits> features,
                             std::span<const std::int8_t> weights, float scale) {
  return pe_dot_product_detail(features, weights, scale).value;
}

/// DSP-shared pass: one feature vector against two weight vectors, each lane's
/// mantissa multiplied by both weights in a single packed multiply.
std::array<PeResult, 2> pe_dual_dot_product(std::span<const Fp16Bits> features,
                                            std::span<const std::int8_t> weights_hi,
                                            std::span<const std::int8_t> weights_lo,
                                            float scale);

}  // namespace ttd
