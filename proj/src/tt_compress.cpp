#include "ttd/tt_compress.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>

namespace ttd {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void TTConfig::validate() const {
  if (n_factors.size() != m_factors.size()) {
    throw InvalidArgument("n_factors and m_factors must have the same length");
  }
  if (n_factors.size() < 2) throw InvalidArgument("TT config needs d >= 2 factors");
  for (auto f : n_factors) {
    if (f == 0) throw InvalidArgument("factors must be positive");
  }
  for (auto f : m_factors) {
    if (f == 0) throw InvalidArgument("factors must be positive");
  }
  if (max_rank == 0) throw InvalidArgument("max_rank must be positive");
  if (epsilon < 0.0 || !std::isfinite(epsilon)) throw InvalidArgument("epsilon must be >= 0");
  if (stage_ranks) {
    if (stage_ranks->size() + 1 != n_factors.size()) {
      throw InvalidArgument("stage_ranks must list d-1 ranks");
    }
    for (auto r : *stage_ranks) {
      if (r == 0) throw InvalidArgument("stage ranks must be positive");
    }
  }
}

TTCores::TTCores(std::vector<DenseTensor> cores) : cores_(std::move(cores)) {
  if (cores_.size() < 2) throw InvalidArgument("TT cores need d >= 2");
  ranks_.push_back(1);
  for (std::size_t k = 0; k < cores_.size(); ++k) {
    const auto& s = cores_[k].shape();
    if (s.rank() != 4) {
      throw InvalidArgument("core " + std::to_string(k) + " must be 4-way, got " + s.str());
    }
    if (s[0] != ranks_.back()) {
      throw InvalidArgument("rank mismatch entering core " + std::to_string(k));
    }
    n_.push_back(s[1]);
    m_.push_back(s[2]);
    ranks_.push_back(s[3]);
  }
  if (ranks_.back() != 1) throw InvalidArgument("last TT rank must be 1");
}

std::size_t TTCores::parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : cores_) n += c.numel();
  return n;
}

std::vector<std::size_t> uniform_ranks(std::size_t d, std::size_t r) {
  std::vector<std::size_t> ranks(d + 1, r);
  ranks.front() = 1;
  ranks.back() = 1;
  return ranks;
}

std::size_t tt_parameter_count(std::span<const std::size_t> n, std::span<const std::size_t> m,
                               std::span<const std::size_t> ranks) {
  if (n.size() != m.size() || n.empty()) throw InvalidArgument("factor lists differ in length");
  std::vector<std::size_t> r;
  if (ranks.size() == 1 && n.size() != 0) {
    r = uniform_ranks(n.size(), ranks[0]);
  } else {
    r.assign(ranks.begin(), ranks.end());
  }
  if (r.size() != n.size() + 1) throw InvalidArgument("rank list must have d+1 entries");
  if (r.front() != 1 || r.back() != 1) throw InvalidArgument("boundary ranks must be 1");
  for (auto v : r) {
    if (v == 0) throw InvalidArgument("ranks must be positive");
  }
  std::size_t total = 0;
  for (std::size_t k = 0; k < n.size(); ++k) total += n[k] * m[k] * r[k] * r[k + 1];
  return total;
}

double compression_ratio(std::span<const std::size_t> n, std::span<const std::size_t> m,
                         std::span<const std::size_t> ranks) {
  const double dense = static_cast<double>(product(n)) * static_cast<double>(product(m));
  return dense / static_cast<double>(tt_parameter_count(n, m, ranks));
}

double compression_ratio(const TTConfig& cfg, std::span<const std::size_t> ranks) {
  cfg.validate();
  return compression_ratio(cfg.n_factors, cfg.m_factors, ranks);
}

DenseTensor weight_to_tt_tensor(const DenseTensor& weight, std::span<const std::size_t> n,
                                std::span<const std::size_t> m) {
  const std::size_t d = n.size();
  if (weight.rank() != 2) throw ShapeError("weight must be 2-D, got " + weight.shape().str());
  if (m.size() != d) throw ShapeError("factor lists differ in length");
  if (weight.shape()[0] != product(m) || weight.shape()[1] != product(n)) {
    throw ShapeError("weight " + weight.shape().str() + " does not match factors (M=" +
                     std::to_string(product(m)) + ", N=" + std::to_string(product(n)) + ")");
  }
  // (j_1..j_d, i_1..i_d) -> (i_1, j_1, ..., i_d, j_d)
  std::vector<std::size_t> split(m.begin(), m.end());
  split.insert(split.end(), n.begin(), n.end());
  std::vector<std::size_t> perm;
  for (std::size_t k = 0; k < d; ++k) {
    perm.push_back(d + k);
    perm.push_back(k);
  }
  auto interleaved = permute_axes(tensorize(weight, Shape(split)), perm);
  std::vector<std::size_t> fused(d);
  for (std::size_t k = 0; k < d; ++k) fused[k] = n[k] * m[k];
  return tensorize(std::move(interleaved), Shape(fused));
}

DenseTensor tt_tensor_to_weight(const DenseTensor& t, std::span<const std::size_t> n,
                                std::span<const std::size_t> m) {
  const std::size_t d = n.size();
  std::vector<std::size_t> pairs;
  for (std::size_t k = 0; k < d; ++k) {
    pairs.push_back(n[k]);
    pairs.push_back(m[k]);
  }
  // (i_1, j_1, ..., i_d, j_d) -> (j_1..j_d, i_1..i_d)
  std::vector<std::size_t> perm;
  for (std::size_t k = 0; k < d; ++k) perm.push_back(2 * k + 1);
  for (std::size_t k = 0; k < d; ++k) perm.push_back(2 * k);
  auto split = permute_axes(tensorize(t, Shape(pairs)), perm);
  return tensorize(std::move(split), Shape{product(m), product(n)});
}

double frobenius_norm(std::span<const double> v) {
  // Scaled accumulation avoids overflow for large entries.
  double scale = 0.0, ssq = 1.0;
  for (double x : v) {
    if (x == 0.0) continue;
    const double a = std::fabs(x);
    if (scale < a) {
      ssq = 1.0 + ssq * (scale / a) * (scale / a);
      scale = a;
    } else {
      ssq += (a / scale) * (a / scale);
    }
  }
  return scale * std::sqrt(ssq);
}

namespace {

std::size_t numerical_rank(const Eigen::VectorXd& sv, std::size_t rows, std::size_t cols) {
  if (sv.size() == 0 || sv(0) == 0.0) return 1;
  const double tol = sv(0) * static_cast<double>(std::max(rows, cols)) *
                     std::numeric_limits<double>::epsilon();
  std::size_t r = 0;
  while (r < static_cast<std::size_t>(sv.size()) && sv(static_cast<Eigen::Index>(r)) > tol) ++r;
  return std::max<std::size_t>(r, 1);
}

}  // namespace

TTSvdResult tt_svd_detailed(const DenseTensor& weight, const TTConfig& cfg) {
  cfg.validate();
  if (cfg.d() < 2) throw InvalidArgument("tt_svd requires d >= 2");
  for (double v : weight.data()) {
    if (!std::isfinite(v)) throw NumericError("weight contains non-finite values");
  }
  const auto& n = cfg.n_factors;
  const auto& m = cfg.m_factors;
  const std::size_t d = cfg.d();
  const auto tensor = weight_to_tt_tensor(weight, n, m);

  const double delta =
      cfg.epsilon * frobenius_norm(weight.data()) / std::sqrt(static_cast<double>(d - 1));

  std::vector<double> carry(tensor.data().begin(), tensor.data().end());
  std::vector<DenseTensor> cores;
  std::vector<double> residuals;
  std::size_t r_prev = 1;

  for (std::size_t k = 0; k + 1 < d; ++k) {
    const std::size_t rows = r_prev * n[k] * m[k];
    const std::size_t cols = carry.size() / rows;
    Eigen::Map<const RowMatrix> c(carry.data(), static_cast<Eigen::Index>(rows),
                                  static_cast<Eigen::Index>(cols));
    Eigen::BDCSVD<Eigen::MatrixXd> svd(c, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) {
      throw NumericError("SVD did not converge at stage " + std::to_string(k + 1));
    }
    const Eigen::VectorXd& sv = svd.singularValues();
    Eigen::MatrixXd u = svd.matrixU();
    Eigen::MatrixXd v = svd.matrixV();

    std::size_t r = std::min({cfg.max_rank, rows, cols, numerical_rank(sv, rows, cols)});
    if (cfg.stage_ranks) r = std::min(r, (*cfg.stage_ranks)[k]);
    if (delta > 0.0) {
      // Smallest rank whose discarded tail stays within the per-stage budget.
      double tail = 0.0;
      std::size_t keep = static_cast<std::size_t>(sv.size());
      while (keep > 1) {
        const double s = sv(static_cast<Eigen::Index>(keep - 1));
        if (std::sqrt(tail + s * s) > delta) break;
        tail += s * s;
        --keep;
      }
      r = std::min(r, keep);
    }
    r = std::max<std::size_t>(r, 1);

    double dropped = 0.0;
    for (auto i = static_cast<Eigen::Index>(r); i < sv.size(); ++i) dropped += sv(i) * sv(i);
    residuals.push_back(std::sqrt(dropped));

    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(r); ++j) {
      Eigen::Index arg = 0;
      u.col(j).cwiseAbs().maxCoeff(&arg);
      if (u(arg, j) < 0.0) {
        u.col(j) *= -1.0;
        v.col(j) *= -1.0;
      }
    }

    const auto ri = static_cast<Eigen::Index>(r);
    RowMatrix core_rows = u.leftCols(ri);
    cores.emplace_back(Shape{r_prev, n[k], m[k], r},
                       std::vector<double>(core_rows.data(), core_rows.data() + core_rows.size()));

    RowMatrix next = sv.head(ri).asDiagonal() * v.leftCols(ri).transpose();
    carry.assign(next.data(), next.data() + next.size());
    r_prev = r;
  }
  cores.emplace_back(Shape{r_prev, n[d - 1], m[d - 1], 1}, std::move(carry));
  return {TTCores(std::move(cores)), std::move(residuals)};
}

DenseTensor reconstruct(const TTCores& tt) {
  const std::size_t d = tt.d();
  const auto& n = tt.n_factors();
  const auto& m = tt.m_factors();
  const auto& ranks = tt.ranks();

  // acc: (prod_{l<k} n_l m_l) x r_k, row-major
  std::vector<double> acc(tt.core(0).data().begin(), tt.core(0).data().end());
  std::size_t lead = n[0] * m[0];
  for (std::size_t k = 1; k < d; ++k) {
    const std::size_t r_in = ranks[k];
    const std::size_t width = n[k] * m[k] * ranks[k + 1];
    Eigen::Map<const RowMatrix> a(acc.data(), static_cast<Eigen::Index>(lead),
                                  static_cast<Eigen::Index>(r_in));
    Eigen::Map<const RowMatrix> g(tt.core(k).data().data(), static_cast<Eigen::Index>(r_in),
                                  static_cast<Eigen::Index>(width));
    RowMatrix prod = a * g;
    acc.assign(prod.data(), prod.data() + prod.size());
    lead *= n[k] * m[k];
  }
  std::vector<std::size_t> fused(d);
  for (std::size_t k = 0; k < d; ++k) fused[k] = n[k] * m[k];
  return tt_tensor_to_weight(DenseTensor(Shape(fused), std::move(acc)), n, m);
}

ReconstructionError reconstruction_error(const DenseTensor& weight, const TTCores& cores) {
  const auto rec = reconstruct(cores);
  if (rec.shape() != weight.shape()) {
    throw ShapeError("weight " + weight.shape().str() + " vs reconstruction " + rec.shape().str());
  }
  std::vector<double> diff(weight.numel());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = weight[i] - rec[i];
  const double num = frobenius_norm(diff);
  const double den = frobenius_norm(weight.data());
  if (den == 0.0) return {num, true};
  return {num / den, false};
}

QuantCore quantize_core(const DenseTensor& core) {
  double peak = 0.0;
  for (double v : core.data()) peak = std::max(peak, std::fabs(v));
  QuantCore q;
  q.values = Int4Tensor(core.shape());
  if (peak == 0.0) {
    q.scale = 1.0f;
    return q;
  }
  q.scale = static_cast<float>(peak / kInt4Max);
  const double s = q.scale;
  for (std::size_t i = 0; i < core.numel(); ++i) {
    const double level = std::nearbyint(core[i] / s);
    q.values[i] = static_cast<std::int8_t>(std::clamp(level, double{kInt4Min}, double{kInt4Max}));
  }
  return q;
}

std::vector<QuantCore> quantize_cores(const TTCores& cores) {
  std::vector<QuantCore> out;
  out.reserve(cores.d());
  for (const auto& c : cores.cores()) out.push_back(quantize_core(c));
  return out;
}

DenseTensor dequantize(const QuantCore& q) {
  std::vector<double> out(q.values.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = q.values[i] * static_cast<double>(q.scale);
  return DenseTensor(q.values.shape(), std::move(out));
}

}  // namespace ttd
