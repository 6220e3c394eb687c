#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "ttd/numerics.hpp"
#include "ttd/tensor.hpp"

namespace ttd {

/// Factorization and rank budget for compressing an M x N weight (N inputs, M outputs).
struct TTConfig {
  std::vector<std::size_t> n_factors;  ///< input-side factors, product N
  std::vector<std::size_t> m_factors;  ///< output-side factors, product M
  std::size_t max_rank = 16;
  /// Relative truncation tolerance; 0 disables tolerance-driven truncation.
  double epsilon = 0.0;
  /// Optional per-boundary caps r_1..r_{d-1}, applied on top of max_rank.
  std::optional<std::vector<std::size_t>> stage_ranks;

  std::size_t d() const noexcept { return n_factors.size(); }
  std::size_t in_features() const { return product(n_factors); }
  std::size_t out_features() const { return product(m_factors); }

  /// Throws InvalidArgument / ShapeError when the lists are inconsistent.
  void validate() const;
};

/// Core k has shape (r_{k-1}, n_k, m_k, r_k); r_0 = r_d = 1.
class TTCores {
 public:
  TTCores() = default;
  explicit TTCores(std::vector<DenseTensor> cores);

  std::size_t d() const noexcept { return cores_.size(); }
  const std::vector<DenseTensor>& cores() const noexcept { return cores_; }
  const DenseTensor& core(std::size_t k) const { return cores_.at(k); }
  const std::vector<std::size_t>& ranks() const noexcept { return ranks_; }
  const std::vector<std::size_t>& n_factors() const noexcept { return n_; }
  const std::vector<std::size_t>& m_factors() const noexcept { return m_; }
  std::size_t in_features() const { return product(n_); }
  std::size_t out_features() const { return product(m_); }

  std::size_t parameter_count() const;

 private:
  std::vector<DenseTensor> cores_;
  std::vector<std::size_t> ranks_, n_, m_;
};

struct TTSvdResult {
  TTCores cores;
  /// Frobenius norm of the discarded singular values at each of the d-1 SVDs.
  std::vector<double> residuals;
};

/// TT-SVD of a 2-D weight W[M x N]. Singular vectors follow a fixed sign rule
/// (largest-magnitude entry of each left vector non-negative).
TTSvdResult tt_svd_detailed(const DenseTensor& weight, const TTConfig& cfg);
inline TTCores tt_svd(const DenseTensor& weight, const TTConfig& cfg) {
  return tt_svd_detailed(weight, cfg).cores;
}

/// W[M x N] -> tensor of shape (n_1 m_1, ..., n_d m_d), pair index i_k * m_k + j_k.
DenseTensor weight_to_tt_tensor(const DenseTensor& weight, std::span<const std::size_t> n,
                                std::span<const std::size_t> m);
/// Inverse of weight_to_tt_tensor.
DenseTensor tt_tensor_to_weight(const DenseTensor& t, std::span<const std::size_t> n,
                                std::span<const std::size_t> m);

/// Dense M x N matrix represented by the cores.
DenseTensor reconstruct(const TTCores& cores);

/// Dense parameter count over TT parameter count for the given factor lists.
/// `ranks` is [r_0 .. r_d]; a single uniform rank may be passed as {r} instead.
double compression_ratio(std::span<const std::size_t> n, std::span<const std::size_t> m,
                         std::span<const std::size_t> ranks);
double compression_ratio(const TTConfig& cfg, std::span<const std::size_t> ranks);
std::size_t tt_parameter_count(std::span<const std::size_t> n, std::span<const std::size_t> m,
                               std::span<const std::size_t> ranks);

/// [1, r, r, ..., r, 1] for d cores.
std::vector<std::size_t> uniform_ranks(std::size_t d, std::size_t r);

struct ReconstructionError {
  double value = 0.0;
  bool absolute = false;  ///< true when ||W|| = 0 and the absolute norm is reported
};

ReconstructionError reconstruction_error(const DenseTensor& weight, const TTCores& cores);

/// Symmetric per-core INT4 quantization, scale = max|v| / 7, round half to even.
QuantCore quantize_core(const DenseTensor& core);
std::vector<QuantCore> quantize_cores(const TTCores& cores);
DenseTensor dequantize(const QuantCore& q);

double frobenius_norm(std::span<const double> v);

}  // namespace ttd
