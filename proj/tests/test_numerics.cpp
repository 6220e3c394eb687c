#include <gtest/gtest.h>

#include <cmath>

#include "support/gen.hpp"
#include "ttd/error.hpp"
#include "ttd/fp16.hpp"
#include "ttd/numerics.hpp"

using namespace ttd;
using ttd::testing::Gen;
using ttd::testing::HalfRounder;
using ttd::testing::oracle_half_value;

namespace {

const HalfRounder& rounder() {
  static const HalfRounder r;
  return r;
}

/// Exact dot product times 2^24, from field decoding only.
long double oracle_dot(std::span<const Fp16Bits> f, std::span<const std::int8_t> w) {
  long double acc = 0;
  for (std::size_t i = 0; i < f.size(); ++i) acc += static_cast<long double>(oracle_half_value(f[i].bits)) * w[i];
  return acc;
}

unsigned effective_exponent(Fp16Bits f) { return f.exponent() == 0 ? 1u : f.exponent(); }

}  // namespace

TEST(Fp16, DecodeAllFinitePatternsMatchesFieldOracle) {
  for (std::uint32_t b = 0; b <= 0xFFFF; ++b) {
    const Fp16Bits f{static_cast<std::uint16_t>(b)};
    if (!f.is_finite()) {
      EXPECT_THROW(fp16_decode(f), DomainError);
      continue;
    }
    ASSERT_EQ(fp16_decode(f), oracle_half_value(f.bits)) << b;
  }
}

TEST(Fp16, RoundTripsEveryFinitePattern) {
  for (std::uint32_t b = 0; b <= 0xFFFF; ++b) {
    const Fp16Bits f{static_cast<std::uint16_t>(b)};
    if (!f.is_finite()) continue;
    ASSERT_EQ(fp16_encode(fp16_decode(f)).bits, f.bits) << b;
  }
}

TEST(Fp16, EncodeMatchesNearestEvenOracle) {
  Gen g(21);
  for (int i = 0; i < 200000; ++i) {
    const double v = std::ldexp(g.real(-1.0, 1.0), g.uniform_int(-28, 17));
    ASSERT_EQ(fp16_encode(v).bits, rounder().round(v)) << v;
  }
}

TEST(Fp16, TiesGoToEven) {
  // Midpoint between 1 and 1 + 2^-10.
  EXPECT_EQ(fp16_encode(1.0 + std::ldexp(1.0, -11)).bits, 0x3C00);
  // Midpoint between 1 + 2^-10 and 1 + 2^-9 rounds up to the even mantissa 2.
  EXPECT_EQ(fp16_encode(1.0 + 3 * std::ldexp(1.0, -11)).bits, 0x3C02);
  // Smallest subnormal halfway point rounds to zero.
  EXPECT_EQ(fp16_encode(std::ldexp(1.0, -25)).bits, 0x0000);
}

TEST(Fp16, ClampsAndFlagsOverflow) {
  const auto e = fp16_encode_checked(1e6);
  EXPECT_TRUE(e.clamped);
  EXPECT_EQ(e.value.bits, 0x7BFF);
  EXPECT_EQ(fp16_encode(-INFINITY).bits, 0xFBFF);
  EXPECT_FALSE(fp16_encode_checked(65504.0).clamped);
  EXPECT_THROW(fp16_encode(NAN), DomainError);
}

TEST(Mant12, NormalAndSubnormalFields) {
  const auto one = to_mant12(Fp16Bits{0x3C00});
  EXPECT_EQ(one.mant.value, 1024);
  EXPECT_EQ(one.exponent, 15u);
  const auto neg = to_mant12(Fp16Bits{0xBC01});
  EXPECT_EQ(neg.mant.value, -1025);
  const auto sub = to_mant12(Fp16Bits{0x0003});
  EXPECT_EQ(sub.mant.value, 3);
  EXPECT_EQ(sub.exponent, 1u);
  EXPECT_THROW(to_mant12(Fp16Bits{0x7C00}), DomainError);
}

TEST(PackedMultiply, ExhaustiveSignedProducts) {
  std::size_t cases = 0;
  for (int m = -2047; m <= 2047; ++m) {
    for (int hi = kInt4Min; hi <= kInt4Max; ++hi) {
      for (int lo = kInt4Min; lo <= kInt4Max; ++lo) {
        const auto p = packed_dsp_multiply(Mant12{static_cast<std::int16_t>(m)}, PackedWeightPair(hi, lo));
        if (p.hi != m * hi || p.lo != m * lo) {
          FAIL() << "m=" << m << " hi=" << hi << " lo=" << lo;
        }
        ++cases;
      }
    }
  }
  EXPECT_EQ(cases, 4095u * 256u);
}

TEST(PackedMultiply, PackUnpackAndRange) {
  for (int hi = -8; hi <= 7; ++hi) {
    for (int lo = -8; lo <= 7; ++lo) {
      const PackedWeightPair p(hi, lo);
      EXPECT_EQ(p.packed(), hi * 65536 + lo);
      const auto u = PackedWeightPair::unpack(p.packed());
      EXPECT_EQ(u.w_hi(), hi);
      EXPECT_EQ(u.w_lo(), lo);
    }
  }
  EXPECT_THROW(PackedWeightPair(8, 0), InvalidArgument);
  EXPECT_THROW(PackedWeightPair(0, -9), InvalidArgument);
}

TEST(AdderTree, SumsAndChecksWidth) {
  std::vector<std::int64_t> v{1, -2, 3, 4, 5};
  EXPECT_EQ(adder_tree_reduce(v), 11);
  std::vector<std::int64_t> wide{1 << 20};
  EXPECT_THROW(adder_tree_reduce(wide), OverflowError);
  std::vector<std::int64_t> full(128, 16376);
  EXPECT_EQ(adder_tree_reduce(full), 128 * 16376);
}

TEST(Align, ArithmeticShiftAndFlush) {
  EXPECT_EQ(align_product(-5, 1), -3);
  EXPECT_EQ(align_product(12, 2), 3);
  EXPECT_EQ(align_product(-1, 40), 0);
}

TEST(Pe, WithinAlignmentBoundOfExactDot) {
  Gen g(99);
  constexpr std::size_t kLanes = 128;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<Fp16Bits> f(kLanes);
    std::vector<std::int8_t> w(kLanes);
    const unsigned e_lo = static_cast<unsigned>(g.uniform(0, 20));
    for (std::size_t i = 0; i < kLanes; ++i) {
      f[i] = g.half(e_lo, e_lo + static_cast<unsigned>(g.uniform(0, 8)));
      w[i] = g.int4();
    }
    const float scale = static_cast<float>(g.real(0.01, 2.0));
    const auto r = pe_dot_product_detail(f, w, scale);
    const long double exact = oracle_dot(f, w) * scale;
    unsigned e_max = 1;
    for (auto x : f) e_max = std::max(e_max, effective_exponent(x));
    const long double bound = std::ldexp(1.0L, static_cast<int>(e_max) - 25) * kLanes * scale;
    ASSERT_LE(std::abs(static_cast<long double>(r.unrounded) - exact), bound) << trial;
    if (!r.saturated) {
      const long double half_ulp = 0.5L * fp16_ulp(r.value);
      ASSERT_LE(std::abs(static_cast<long double>(r.value) - exact), bound + half_ulp) << trial;
    }
  }
}

TEST(Pe, EqualExponentsExactAfterOneRounding) {
  Gen g(5);
  for (int trial = 0; trial < 5000; ++trial) {
    const std::size_t lanes = g.uniform(1, 128);
    const unsigned e = static_cast<unsigned>(g.uniform(1, 22));
    std::vector<Fp16Bits> f(lanes);
    std::vector<std::int8_t> w(lanes);
    for (std::size_t i = 0; i < lanes; ++i) {
      f[i] = g.half(e, e);
      w[i] = g.int4();
    }
    const float scale = static_cast<float>(g.real(0.05, 1.5));
    const double exact = static_cast<double>(oracle_dot(f, w)) * static_cast<double>(scale);
    ASSERT_EQ(pe_dot_product_detail(f, w, scale).bits.bits, rounder().round(exact)) << trial;
  }
}

TEST(Pe, DualPassMatchesTwoSinglePasses) {
  Gen g(17);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t lanes = g.uniform(1, 128);
    std::vector<Fp16Bits> f(lanes);
    std::vector<std::int8_t> a(lanes), b(lanes);
    for (std::size_t i = 0; i < lanes; ++i) {
      f[i] = g.half(0, 24);
      a[i] = g.int4();
      b[i] = g.int4();
    }
    const auto dual = pe_dual_dot_product(f, a, b, 0.25f);
    ASSERT_EQ(dual[0].bits, pe_dot_product_detail(f, a, 0.25f).bits);
    ASSERT_EQ(dual[1].bits, pe_dot_product_detail(f, b, 0.25f).bits);
  }
}

TEST(Pe, RejectsBadArguments) {
  std::vector<Fp16Bits> f(4);
  std::vector<std::int8_t> w(3);
  EXPECT_THROW(pe_dot_product(f, w, 1.0f), ShapeError);
  std::vector<std::int8_t> w4(4);
  EXPECT_THROW(pe_dot_product(f, w4, 0.0f), InvalidArgument);
}
