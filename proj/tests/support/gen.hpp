#pragma once

// Seeded generators and independent oracles shared by the test binaries.
// Oracles here deliberately avoid the library's own helpers (no reconstruct,
// no permute_axes, no fp16_encode) so they can check them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ttd/fp16.hpp"
#include "ttd/tensor.hpp"
#include "ttd/tt_compress.hpp"

namespace ttd::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::mt19937_64& engine() { return rng_; }

  /// Inclusive range.
  std::size_t uniform(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }
  bool coin() { return uniform(0, 1) == 1; }

  std::vector<double> normals(std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal();
    return v;
  }

  std::vector<std::size_t> factors(std::size_t d, std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> f(d);
    for (auto& x : f) x = uniform(lo, hi);
    return f;
  }

  /// [1, r_1..r_{d-1}, 1] with interior ranks in 1..max_rank.
  std::vector<std::size_t> ranks(std::size_t d, std::size_t max_rank) {
    std::vector<std::size_t> r(d + 1, 1);
    for (std::size_t k = 1; k < d; ++k) r[k] = uniform(1, max_rank);
    return r;
  }

  DenseTensor matrix(std::size_t rows, std::size_t cols) {
    return DenseTensor(Shape({rows, cols}), normals(rows * cols));
  }

  TTCores cores(const std::vector<std::size_t>& n, const std::vector<std::size_t>& m,
                const std::vector<std::size_t>& r) {
    std::vector<DenseTensor> cs;
    for (std::size_t k = 0; k < n.size(); ++k) {
      cs.emplace_back(Shape({r[k], n[k], m[k], r[k + 1]}), normals(r[k] * n[k] * m[k] * r[k + 1]));
    }
    return TTCores(std::move(cs));
  }

  /// Random finite half with exponent field in [e_lo, e_hi].
  Fp16Bits half(unsigned e_lo = 0, unsigned e_hi = 30) {
    const auto e = static_cast<std::uint16_t>(uniform(e_lo, e_hi));
    const auto mant = static_cast<std::uint16_t>(uniform(0, 1023));
    const auto sign = static_cast<std::uint16_t>(uniform(0, 1));
    return Fp16Bits{static_cast<std::uint16_t>((sign << 15) | (e << 10) | mant)};
  }

  std::int8_t int4() { return static_cast<std::int8_t>(uniform_int(-8, 7)); }

 private:
  std::mt19937_64 rng_;
};

/// max |a - b| / max |b|, with an all-zero reference compared absolutely.
inline double max_rel_diff(std::span<const double> a, std::span<const double> b) {
  double diff = 0, ref = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    ref = std::max(ref, std::abs(b[i]));
  }
  return ref > 0 ? diff / ref : diff;
}

/// Dense W[o, i] = prod_k G_k[r_{k-1}, i_k, j_k, r_k] summed over ranks, with
/// i = (i_1..i_d), o = (j_1..j_d) row-major. Evaluated per entry.
inline DenseTensor oracle_weight(const TTCores& c) {
  const auto& n = c.n_factors();
  const auto& m = c.m_factors();
  const auto& r = c.ranks();
  const std::size_t d = c.d();
  std::size_t N = 1, M = 1;
  for (auto v : n) N *= v;
  for (auto v : m) M *= v;
  std::vector<double> w(M * N);
  std::vector<std::size_t> ii(d), jj(d);
  for (std::size_t o = 0; o < M; ++o) {
    std::size_t rem = o;
    for (std::size_t k = d; k-- > 0;) {
      jj[k] = rem % m[k];
      rem /= m[k];
    }
    for (std::size_t in = 0; in < N; ++in) {
      rem = in;
      for (std::size_t k = d; k-- > 0;) {
        ii[k] = rem % n[k];
        rem /= n[k];
      }
      std::vector<double> row{1.0};
      for (std::size_t k = 0; k < d; ++k) {
        const auto& g = c.core(k);
        std::vector<double> next(r[k + 1], 0.0);
        for (std::size_t a = 0; a < r[k]; ++a) {
          for (std::size_t b = 0; b < r[k + 1]; ++b) {
            next[b] += row[a] * g[((a * n[k] + ii[k]) * m[k] + jj[k]) * r[k + 1] + b];
          }
        }
        row = std::move(next);
      }
      w[o * N + in] = row[0];
    }
  }
  return DenseTensor(Shape({M, N}), std::move(w));
}

inline std::vector<double> oracle_matvec(const DenseTensor& w, std::span<const double> x) {
  const std::size_t rows = w.shape()[0], cols = w.shape()[1];
  std::vector<double> y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    long double acc = 0;
    for (std::size_t c = 0; c < cols; ++c) acc += static_cast<long double>(w[r * cols + c]) * x[c];
    y[r] = static_cast<double>(acc);
  }
  return y;
}

/// Exact value of a finite half from its fields.
inline double oracle_half_value(std::uint16_t bits) {
  const int sign = bits >> 15;
  const int e = (bits >> 10) & 0x1F;
  const int mant = bits & 0x3FF;
  const double mag = e == 0 ? std::ldexp(mant, -24) : std::ldexp(1024 + mant, e - 25);
  return sign ? -mag : mag;
}

/// Round-to-nearest-even onto the finite halves by search over the sorted
/// non-negative values; magnitudes beyond the top value clamp to it.
class HalfRounder {
 public:
  HalfRounder() {
    for (std::uint16_t b = 0; b < 0x7C00; ++b) values_.push_back(oracle_half_value(b));
  }

  std::uint16_t round(double v) const {
    const double a = std::abs(v);
    const std::uint16_t sign = std::signbit(v) ? 0x8000 : 0;
    if (a >= values_.back()) {
      if (a >= 65520.0) return sign | 0x7BFF;  // clamp
    }
    auto it = std::lower_bound(values_.begin(), values_.end(), a);
    std::size_t hi = static_cast<std::size_t>(it - values_.begin());
    if (hi == values_.size()) return sign | 0x7BFF;
    if (values_[hi] == a || hi == 0) return sign | static_cast<std::uint16_t>(hi);
    const std::size_t lo = hi - 1;
    const double dl = a - values_[lo], dh = values_[hi] - a;
    std::size_t pick = dl < dh ? lo : (dh < dl ? hi : (lo % 2 == 0 ? lo : hi));
    return sign | static_cast<std::uint16_t>(pick);
  }

  double round_value(double v) const { return oracle_half_value(round(v)); }

 private:
  std::vector<double> values_;
};

}  // namespace ttd::testing
