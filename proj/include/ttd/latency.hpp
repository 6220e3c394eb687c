#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttd/instructions.hpp"

namespace ttd {

struct LatencyEntry {
  std::string op;  ///< label of the compressed-block op in this slot
  double us = 0;
};

/// Measured per-op delays of one compressed block and of the output layers.
/// Blocks without TT compression keep their dense-op delays; their TT slots are
/// stretched so that the whole block costs speedup x the compressed block sum.
struct LatencyTable {
  std::string model;
  std::vector<LatencyEntry> block;   ///< 14 rows
  std::vector<LatencyEntry> output;  ///< 2 rows
  double single_block_speedup = 1.0;

  void validate() const;
  double block_sum_us() const;
  double output_sum_us() const;
  /// Factor applied to TT slots of an uncompressed block.
  double baseline_tt_scale() const;
};

nlohmann::json to_json(const LatencyTable& t);
LatencyTable latency_table_from_json(const nlohmann::json& j);
LatencyTable latency_preset(const std::string& model_name);

/// Delay of one instruction at a given attended length; attention ops scale
/// linearly with kv_len. Throws InvalidArgument naming the op when the table
/// has no matching row.
double instruction_delay_us(const Instruction& ins, const LatencyTable& table,
                            std::size_t kv_len = 1);

struct LatencyEstimate {
  double first_token_ms = 0;
  double decode_step_ms = 0;  ///< one decode step at kv_len
  double tokens_per_s = 0;    ///< 1000 / decode_step_ms, 0 for an empty stream
};

LatencyEstimate estimate_latency(std::span<const Instruction> stream, const LatencyTable& table,
                                 std::size_t kv_len = 1);

}  // namespace ttd
