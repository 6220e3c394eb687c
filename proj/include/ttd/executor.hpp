#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ttd/op_graph.hpp"
#include "ttd/tt_compress.hpp"

namespace ttd {

/// Weights of one linear slot. `dense` is [out x in]; BN is a per-output-channel
/// affine on the linear result.
struct LinearWeights {
  DenseTensor dense;
  std::optional<TTCores> tt;
  std::vector<QuantCore> quant;
  std::vector<double> bn_scale, bn_bias;
};

struct ModelWeights {
  DenseTensor embedding;  ///< [vocab x hidden]
  std::map<std::string, std::vector<double>> norms;
  std::map<std::string, LinearWeights> linears;
};

/// Random weights for every slot of cfg, deterministic in seed.
ModelWeights random_weights(const ModelConfig& cfg, std::uint64_t seed);

/// Decomposes the TT slots of compressed blocks. `max_rank` overrides the
/// layout rank (use a large value for exact cores); INT4 cores are filled too.
void compress_weights(ModelWeights& weights, const ModelConfig& cfg,
                      std::optional<std::size_t> max_rank = std::nullopt);

/// Dense: every linear uses `dense`. TT: TTDLinear nodes run the staged TT
/// contraction. Quant: TTDLinear nodes run the FP16 x INT4 path.
enum class ExecMode { Dense, TT, Quant };

struct ExecResult {
  std::vector<double> logits;  ///< [tokens x vocab]
  std::vector<std::size_t> token_ids;
  std::size_t tokens = 0;
};

inline constexpr double kNormEpsilon = 1e-5;

/// Reference-precision forward pass over a desk-scale graph.
ExecResult functional_execute(const OperatorGraph& graph, const ModelWeights& weights,
                              const std::vector<std::size_t>& tokens,
                              ExecMode mode = ExecMode::Dense);

// Nonlinear building blocks, exposed for direct testing.
std::vector<double> rms_norm(const std::vector<double>& x, std::size_t width,
                             const std::vector<double>& gain);
void softmax_causal_inplace(std::vector<double>& scores, std::size_t heads, std::size_t tokens);
double gelu(double x);
double silu(double x);

}  // namespace ttd
