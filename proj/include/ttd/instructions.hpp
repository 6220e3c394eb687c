#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ttd/gvsa_sim.hpp"
#include "ttd/op_graph.hpp"

namespace ttd {

/// One serialized accelerator instruction. Addresses are element offsets in a
/// flat activation space; weights live outside it.
struct Instruction {
  std::size_t seq = 0;
  OpKind kind = OpKind::Linear;
  OpRole role = OpRole::Aux;
  std::string label;
  int block = -1;
  std::size_t slot = 0;
  bool compressed = false;
  bool attention = false;
  FusionFlags flags;
  std::size_t in_dim = 0, out_dim = 0, tokens = 1;
  std::vector<std::size_t> n, m, ranks;  ///< TT layout, empty for dense ops
  std::vector<std::array<std::size_t, 3>> loops;  ///< per stage {L_time, L_out, L_sum}
  std::vector<std::uint64_t> in_addrs, out_addrs;
  std::vector<std::uint64_t> in_sizes, out_sizes;

  bool operator==(const Instruction&) const = default;
};

struct EmitOptions {
  std::size_t tokens = 1;
  PEConfig pe;
};

struct InstructionStream {
  std::vector<Instruction> instructions;
  std::uint64_t input_addr = 0;
  std::uint64_t memory_elements = 0;  ///< high-water mark of the address space
};

/// Topological order, first-fit allocation over tensor lifetimes: a tensor is
/// freed after its last reader, outputs are placed before inputs are freed.
InstructionStream emit_instructions(const OperatorGraph& graph, const EmitOptions& opts = {});

/// One JSON object per line: {seq, kind, params, in_addrs, out_addrs}.
std::string serialize(const InstructionStream& stream);
InstructionStream parse_instructions(const std::string& text);

}  // namespace ttd
