#pragma once

// Functional TT inference of a linear layer y = W x.
//
// Staged form. P_0 is X with a leading unit rank axis. Stage k (1-based) contracts
// the fused axis (r_{k-1}, i_k) of P_{k-1} with core k:
//
//   Pbar_k[t_{k-1}, (j_k, r_k)] = sum_{(r_{k-1}, i_k)} G_k[(r_{k-1}, i_k), (j_k, r_k)]
//                                                  * P_{k-1}[(r_{k-1}, i_k), t_{k-1}]
//
// with t_{k-1} = (i_{k+1}..i_d, j_1..j_{k-1}). The reorder moves r_k to the front,
// giving P_k[(r_k, i_{k+1}), t_k]. After stage d the leading axis is r_d = 1 and the
// remaining axes are (j_1..j_d) in canonical order.

#include <cstddef>
#include <span>
#include <vector>

#include "ttd/fp16.hpp"
#include "ttd/numerics.hpp"
#include "ttd/tt_compress.hpp"

namespace ttd {

/// Partial result after stage k, axes (r_k, i_{k+1}, ..., i_d, j_1, ..., j_k).
template <typename T>
struct StagePartial {
  std::size_t stage = 0;
  BasicTensor<T> tensor;
};

/// Stage-k output before reordering, axes (i_{k+1}..i_d, j_1..j_{k-1}, j_k, r_k).
template <typename T>
struct StageOutput {
  std::size_t stage = 0;
  BasicTensor<T> tensor;
};

/// Extents of P_k's axes for a layer with factors n, m and ranks [r_0..r_d].
std::vector<std::size_t> partial_dims(std::span<const std::size_t> n, std::span<const std::size_t> m,
                                      std::span<const std::size_t> ranks, std::size_t stage);
/// Extents of Pbar_k's axes.
std::vector<std::size_t> stage_output_dims(std::span<const std::size_t> n,
                                           std::span<const std::size_t> m,
                                           std::span<const std::size_t> ranks, std::size_t stage);

/// Move the trailing rank axis to the front. Throws InvalidArgument when the
/// stage index is outside 1..d.
template <typename T>
StagePartial<T> reorder_stage(const StageOutput<T>& pbar, std::size_t d) {
  if (pbar.stage < 1 || pbar.stage > d) {
    throw InvalidArgument("reorder_stage: stage " + std::to_string(pbar.stage) +
                          " outside 1.." + std::to_string(d));
  }
  const std::size_t rank = pbar.tensor.rank();
  std::vector<std::size_t> perm(rank);
  perm[0] = rank - 1;
  for (std::size_t a = 1; a < rank; ++a) perm[a] = a - 1;
  return {pbar.stage, permute_axes(pbar.tensor, perm)};
}

/// y = W x in f64, accumulating in ascending column order.
std::vector<double> dense_linear(std::span<const double> x, const DenseTensor& weight);

/// Direct nested summation over i_1..i_d with a running rank vector. X may be
/// flat [N] or tensorized (n_1..n_d); output has shape (m_1..m_d).
DenseTensor ttd_linear_naive(const DenseTensor& x, const TTCores& cores);

/// Stage-by-stage contraction with explicit reorders.
DenseTensor ttd_linear_staged(const DenseTensor& x, const TTCores& cores);

/// Same as ttd_linear_staged, keeping every P_k (P_0 first, P_d last).
std::vector<StagePartial<double>> ttd_linear_staged_trace(const DenseTensor& x,
                                                          const TTCores& cores);

/// One reference stage: Pbar_k from P_{k-1} and core k.
StageOutput<double> stage_contract(const StagePartial<double>& prev, const DenseTensor& core);

/// Input X viewed as P_0 (leading unit rank axis).
template <typename T>
StagePartial<T> initial_partial(const BasicTensor<T>& x, std::span<const std::size_t> n) {
  if (x.numel() != product(n)) {
    throw ShapeError("input has " + std::to_string(x.numel()) + " elements, cores expect " +
                     std::to_string(product(n)));
  }
  std::vector<std::size_t> dims{1};
  dims.insert(dims.end(), n.begin(), n.end());
  return {0, tensorize(x, Shape(dims))};
}

/// Final partial (axes (1, j_1..j_d)) as the canonical output tensor (m_1..m_d).
template <typename T>
BasicTensor<T> final_output(const StagePartial<T>& last, std::span<const std::size_t> m) {
  return tensorize(last.tensor, Shape(std::vector<std::size_t>(m.begin(), m.end())));
}

/// Fixed INT4/FP16 datapath parameters for the quantized path.
inline constexpr std::size_t kDefaultLanes = 128;

/// Quantized staged inference: every accumulation runs through the PE model.
/// Per output element the summation axis is split into `lanes`-wide chunks
/// (zero padded); adjacent output channels share one DSP pass; chunk results
/// are summed in fp32 in ascending chunk order and rounded once to fp16.
HalfTensor ttd_linear_quant(const HalfTensor& x, std::span<const QuantCore> qcores,
                            std::size_t lanes = kDefaultLanes);

std::vector<StagePartial<Fp16Bits>> ttd_linear_quant_trace(const HalfTensor& x,
                                                           std::span<const QuantCore> qcores,
                                                           std::size_t lanes = kDefaultLanes);

/// Factor/rank layout implied by a list of quantized cores.
struct CoreLayout {
  std::vector<std::size_t> n, m, ranks;
};
CoreLayout core_layout(std::span<const QuantCore> qcores);

}  // namespace ttd
