#include "ttd/tt_infer.hpp"

#include <functional>

namespace ttd {

std::vector<std::size_t> partial_dims(std::span<const std::size_t> n, std::span<const std::size_t> m,
                                      std::span<const std::size_t> ranks, std::size_t stage) {
  const std::size_t d = n.size();
  if (stage > d) throw InvalidArgument("partial_dims: stage out of range");
  std::vector<std::size_t> dims{ranks[stage]};
  for (std::size_t i = stage; i < d; ++i) dims.push_back(n[i]);
  for (std::size_t j = 0; j < stage; ++j) dims.push_back(m[j]);
  return dims;
}

std::vector<std::size_t> stage_output_dims(std::span<const std::size_t> n,
                                           std::span<const std::size_t> m,
                                           std::span<const std::size_t> ranks, std::size_t stage) {
  const std::size_t d = n.size();
  if (stage < 1 || stage > d) throw InvalidArgument("stage_output_dims: stage out of range");
  std::vector<std::size_t> dims;
  for (std::size_t i = stage; i < d; ++i) dims.push_back(n[i]);
  for (std::size_t j = 0; j < stage; ++j) dims.push_back(m[j]);
  dims.push_back(ranks[stage]);
  return dims;
}

std::vector<double> dense_linear(std::span<const double> x, const DenseTensor& weight) {
  if (weight.rank() != 2 || weight.shape()[1] != x.size()) {
    throw ShapeError("dense_linear: weight " + weight.shape().str() + " vs input length " +
                     std::to_string(x.size()));
  }
  const std::size_t rows = weight.shape()[0];
  const std::size_t cols = weight.shape()[1];
  std::vector<double> y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += weight[r * cols + c] * x[c];
    y[r] = acc;
  }
  return y;
}

DenseTensor ttd_linear_naive(const DenseTensor& x, const TTCores& cores) {
  const auto& n = cores.n_factors();
  const auto& m = cores.m_factors();
  const auto& ranks = cores.ranks();
  const std::size_t d = cores.d();
  if (x.numel() != cores.in_features()) {
    throw ShapeError("ttd_linear_naive: input has " + std::to_string(x.numel()) +
                     " elements, cores expect " + std::to_string(cores.in_features()));
  }
  const Shape out_shape(std::vector<std::size_t>(m.begin(), m.end()));
  DenseTensor y(out_shape);
  const auto xs = x.data();

  // vecs[k] holds the row vector G_1[i_1,j_1] ... G_k[i_k,j_k] (length r_k).
  std::vector<std::vector<double>> vecs(d + 1);
  for (std::size_t k = 0; k <= d; ++k) vecs[k].assign(ranks[k], 0.0);
  vecs[0][0] = 1.0;
  std::vector<std::size_t> j(d);

  std::function<double(std::size_t, std::size_t)> sum_from = [&](std::size_t k,
                                                                 std::size_t x_offset) {
    if (k == d) return vecs[d][0] * xs[x_offset];
    const auto& g = cores.core(k).data();
    const std::size_t r_in = ranks[k], r_out = ranks[k + 1];
    double total = 0.0;
    for (std::size_t i = 0; i < n[k]; ++i) {
      auto& next = vecs[k + 1];
      for (std::size_t b = 0; b < r_out; ++b) {
        double acc = 0.0;
        for (std::size_t a = 0; a < r_in; ++a) {
          acc += vecs[k][a] * g[((a * n[k] + i) * m[k] + j[k]) * r_out + b];
        }
        next[b] = acc;
      }
      total += sum_from(k + 1, x_offset * n[k] + i);
    }
    return total;
  };

  for (std::size_t flat = 0; flat < y.numel(); ++flat) {
    j = flat_to_multi(flat, out_shape);
    y[flat] = sum_from(0, 0);
  }
  return y;
}

StageOutput<double> stage_contract(const StagePartial<double>& prev, const DenseTensor& core) {
  const auto& cs = core.shape();
  const auto& ps = prev.tensor.shape();
  if (ps.rank() < 2 || ps[0] != cs[0] || ps[1] != cs[1]) {
    throw ShapeError("stage " + std::to_string(prev.stage + 1) + ": partial " + ps.str() +
                     " does not match core " + cs.str());
  }
  const std::size_t sum = cs[0] * cs[1];
  const std::size_t out = cs[2] * cs[3];
  const std::size_t time = prev.tensor.numel() / sum;
  std::vector<std::size_t> dims(ps.dims().begin() + 2, ps.dims().end());
  dims.push_back(cs[2]);
  dims.push_back(cs[3]);

  const auto p = prev.tensor.data();
  const auto g = core.data();
  std::vector<double> res(time * out, 0.0);
  for (std::size_t t = 0; t < time; ++t) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      for (std::size_t s = 0; s < sum; ++s) acc += g[s * out + o] * p[s * time + t];
      res[t * out + o] = acc;
    }
  }
  return {prev.stage + 1, DenseTensor(Shape(dims), std::move(res))};
}

std::vector<StagePartial<double>> ttd_linear_staged_trace(const DenseTensor& x,
                                                          const TTCores& cores) {
  std::vector<StagePartial<double>> trace;
  trace.push_back(initial_partial(x, cores.n_factors()));
  for (std::size_t k = 0; k < cores.d(); ++k) {
    trace.push_back(reorder_stage(stage_contract(trace.back(), cores.core(k)), cores.d()));
  }
  return trace;
}

DenseTensor ttd_linear_staged(const DenseTensor& x, const TTCores& cores) {
  return final_output(ttd_linear_staged_trace(x, cores).back(), cores.m_factors());
}

CoreLayout core_layout(std::span<const QuantCore> qcores) {
  if (qcores.size() < 2) throw InvalidArgument("quantized TT layer needs d >= 2 cores");
  CoreLayout l;
  l.ranks.push_back(1);
  for (std::size_t k = 0; k < qcores.size(); ++k) {
    const auto& s = qcores[k].values.shape();
    if (s.rank() != 4 || s[0] != l.ranks.back()) {
      throw InvalidArgument("quantized core " + std::to_string(k) + " has inconsistent shape " +
                            s.str());
    }
    l.n.push_back(s[1]);
    l.m.push_back(s[2]);
    l.ranks.push_back(s[3]);
  }
  if (l.ranks.back() != 1) throw InvalidArgument("last TT rank must be 1");
  return l;
}

namespace {

StageOutput<Fp16Bits> quant_stage(const StagePartial<Fp16Bits>& prev, const QuantCore& q,
                                  std::size_t lanes) {
  const auto& cs = q.values.shape();
  const auto& ps = prev.tensor.shape();
  if (ps.rank() < 2 || ps[0] != cs[0] || ps[1] != cs[1]) {
    throw ShapeError("quant stage " + std::to_string(prev.stage + 1) + ": partial " + ps.str() +
                     " does not match core " + cs.str());
  }
  const std::size_t sum = cs[0] * cs[1];
  const std::size_t out = cs[2] * cs[3];
  const std::size_t time = prev.tensor.numel() / sum;
  const std::size_t chunks = (sum + lanes - 1) / lanes;
  std::vector<std::size_t> dims(ps.dims().begin() + 2, ps.dims().end());
  dims.push_back(cs[2]);
  dims.push_back(cs[3]);

  const auto p = prev.tensor.data();
  const auto g = q.values.data();
  std::vector<Fp16Bits> res(time * out);
  std::vector<Fp16Bits> feat(lanes);
  std::vector<std::int8_t> w_hi(lanes), w_lo(lanes);

  for (std::size_t t = 0; t < time; ++t) {
    for (std::size_t o = 0; o < out; o += 2) {
      const bool has_pair = o + 1 < out;
      float acc_hi = 0.0f, acc_lo = 0.0f;
      for (std::size_t c = 0; c < chunks; ++c) {
        for (std::size_t l = 0; l < lanes; ++l) {
          const std::size_t s = c * lanes + l;
          if (s < sum) {
            feat[l] = p[s * time + t];
            w_hi[l] = g[s * out + o];
            w_lo[l] = has_pair ? g[s * out + o + 1] : std::int8_t{0};
          } else {
            feat[l] = Fp16Bits{};
            w_hi[l] = 0;
            w_lo[l] = 0;
          }
        }
        const auto r = pe_dual_dot_product(feat, w_hi, w_lo, q.scale);
        acc_hi += static_cast<float>(r[0].value);
        acc_lo += static_cast<float>(r[1].value);
      }
      res[t * out + o] = fp16_encode(acc_hi);
      if (has_pair) res[t * out + o + 1] = fp16_encode(acc_lo);
    }
  }
  return {prev.stage + 1, HalfTensor(Shape(dims), std::move(res))};
}

}  // namespace

std::vector<StagePartial<Fp16Bits>> ttd_linear_quant_trace(const HalfTensor& x,
                                                           std::span<const QuantCore> qcores,
                                                           std::size_t lanes) {
  if (lanes == 0) throw InvalidArgument("lanes must be positive");
  const auto layout = core_layout(qcores);
  std::vector<StagePartial<Fp16Bits>> trace;
  trace.push_back(initial_partial(x, layout.n));
  for (const auto& q : qcores) {
    trace.push_back(reorder_stage(quant_stage(trace.back(), q, lanes), qcores.size()));
  }
  return trace;
}

HalfTensor ttd_linear_quant(const HalfTensor& x, std::span<const QuantCore> qcores,
                            std::size_t lanes) {
  const auto layout = core_layout(qcores);
  return final_output(ttd_linear_quant_trace(x, qcores, lanes).back(), layout.m);
}

}  // namespace ttd
