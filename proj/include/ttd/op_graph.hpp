#pragma once

// Operator graph of a decoder-only transformer. Tensors are token-major
// matrices; nodes consume and produce tensor ids. The unfused graph carries
// separate BN, Res, TRP and Argmax nodes, and fuse() folds them into the
// linear they attach to.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ttd/error.hpp"
#include "ttd/model_config.hpp"

namespace ttd {

class FusionError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class OpKind { TTDLinear, Linear, LN, EMB, ACT, Softmax, BN, Res, TRP, Argmax };

std::string to_string(OpKind kind);
OpKind op_kind_from_string(const std::string& s);
bool is_linear(OpKind kind);
bool is_nonlinear(OpKind kind);

/// Add: y = linear(x) + r. Gate: y = linear(x) * r (gated MLP).
enum class ResMode { Add, Gate };

/// What a node computes inside its block; selects weights and attention plumbing.
enum class OpRole {
  AttnNorm, QKProj, RopeQ, RopeK, Scores, Softmax, VProj, Context, OProj,
  MlpNorm, Mlp1, Act, Mlp2, Mlp3, FinalNorm, LmHead, Aux
};

std::string to_string(OpRole role);
OpRole op_role_from_string(const std::string& s);

struct FusionFlags {
  bool bn = false;
  bool res = false;
  bool trp = false;
  bool argmax = false;
  ResMode res_mode = ResMode::Add;
  bool operator==(const FusionFlags&) const = default;
};

struct TensorInfo {
  std::size_t id = 0;
  std::string name;
  std::size_t width = 0;     ///< columns per row
  std::size_t row_heads = 1; ///< rows = row_heads * tokens
  bool square = false;       ///< width multiplies by tokens (attention scores)
  std::size_t elements(std::size_t tokens) const {
    return row_heads * tokens * (square ? width * tokens : width);
  }
};

struct OpNode {
  std::size_t id = 0;
  OpKind kind = OpKind::Linear;
  OpRole role = OpRole::Aux;
  int block = -1;             ///< -1 for the output layers
  std::size_t slot = 0;       ///< row in the block (0..13) or output layer (0..1)
  std::string weight;         ///< weight key, e.g. "b0.o"
  std::vector<std::size_t> inputs;
  std::vector<std::size_t> outputs;
  std::size_t in_dim = 0, out_dim = 0;
  std::optional<TTLayerSpec> tt;  ///< set iff kind == TTDLinear
  FusionFlags flags;

  /// Table-style label, e.g. "TTDLinear-BNRes" or "EMB(Q)".
  std::string label() const;
  /// True for ops whose cost scales with the attended sequence length.
  bool attention() const;
};

struct OperatorGraph {
  ModelConfig config;
  std::vector<TensorInfo> tensors;
  std::vector<OpNode> nodes;
  std::size_t input = 0;   ///< embedded tokens
  std::size_t output = 0;  ///< logits, or token ids after Argmax

  const OpNode* producer(std::size_t tensor) const;
  std::vector<const OpNode*> consumers(std::size_t tensor) const;
};

OperatorGraph build_unfused_graph(const ModelConfig& cfg);

/// Folds BN/Res into the preceding linear, TRP into the consuming linear and
/// Argmax into the preceding Linear. Idempotent; throws FusionError on an
/// illegal attachment.
OperatorGraph fuse(OperatorGraph graph);

/// fuse(build_unfused_graph(cfg)).
OperatorGraph build_graph(const ModelConfig& cfg);

/// Kahn order with ties broken by node id; throws GraphError on a cycle.
std::vector<std::size_t> topological_order(const OperatorGraph& graph);

/// The 14 fused labels of one block in execution order.
std::vector<std::string> block_labels(bool compressed);
std::vector<std::string> output_labels();

}  // namespace ttd
