#pragma once

// Cycle-level model of a group vector systolic array (GVSA).
//
// The array has T_out vector PEs of T_in lanes, split into T_out / T_n groups of
// T_n PEs that consume the same feature vector in the same cycle. One weight
// vector enters the array per cycle (into a PE's shadow register); a group
// activates its tile once all of its PEs hold the tile's weights, and every
// weight then stays resident for T_out cycles while T_out feature vectors
// stream past. Feature vectors move from group g to group g+1 after T_n cycles,
// which is exactly the weight-loading skew between adjacent groups.
//
// A stage's loop nest is L_time (outermost) x L_out x L_sum (innermost); one
// tile costs T_out cycles in steady state, and each stage drains with a fill of
// T_out + kPePipelineDepth cycles.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttd/fp16.hpp"
#include "ttd/numerics.hpp"

namespace ttd {

/// Field split, multiply, compare, shift, two adder-tree levels, scale, writeback.
inline constexpr std::uint64_t kPePipelineDepth = 8;

struct PEConfig {
  std::size_t t_in = 128;   ///< lanes per PE
  std::size_t t_out = 32;   ///< PEs in the array, also the weight residency period
  std::size_t t_n = 16;     ///< PEs computing in parallel per group
  double frequency_mhz = 125.0;
  /// Elements per ping-pong bank; 0 leaves the bank unbounded.
  std::size_t bank_capacity = 0;
  bool double_buffering = true;

  std::size_t groups() const noexcept { return t_out / t_n; }
  void validate() const;

  /// Parses "Tin,Tout,Tn,MHz".
  static PEConfig parse(const std::string& spec);
};

std::uint64_t pipeline_fill(const PEConfig& cfg);

struct StagePlan {
  std::size_t stage = 1;
  std::size_t sum_len = 1;   ///< r_{k-1} * n_k
  std::size_t out_len = 1;   ///< m_k * r_k
  std::size_t time_len = 1;  ///< prod_{i>k} n_i * prod_{i<k} m_i
  std::size_t l_sum = 1, l_out = 1, l_time = 1;

  std::uint64_t tiles() const noexcept {
    return static_cast<std::uint64_t>(l_sum) * l_out * l_time;
  }
};

StagePlan make_stage_plan(std::size_t stage, std::size_t sum_len, std::size_t out_len,
                          std::size_t time_len, const PEConfig& cfg);

/// One plan per TT core; ranks is [r_0..r_d].
std::vector<StagePlan> plan_ttd_layer(std::span<const std::size_t> n,
                                      std::span<const std::size_t> m,
                                      std::span<const std::size_t> ranks, const PEConfig& cfg);

/// y[M] = W[M x N] x for `tokens` input vectors as a single stage.
StagePlan plan_matmul(std::size_t m, std::size_t n, const PEConfig& cfg, std::size_t tokens = 1);

/// L_time * L_out * L_sum * T_out + pipeline_fill.
std::uint64_t cycles_analytic(const StagePlan& plan, const PEConfig& cfg);

struct StageReport {
  StagePlan plan;
  std::uint64_t compute_cycles = 0;  ///< first cycle to last MAC issue, inclusive
  std::uint64_t fill_cycles = 0;
  std::uint64_t cycles = 0;          ///< compute + fill
  std::uint64_t reorder_stall_cycles = 0;
  std::uint64_t weight_loads = 0;    ///< weight vectors through the load port (padding included)
  std::uint64_t feature_reads = 0;   ///< feature vectors read into group 0
  std::uint64_t output_writes = 0;   ///< valid output elements written
  std::uint64_t mac_vectors = 0;     ///< PE-cycles spent on T_in-wide MACs
  std::uint64_t load_port_stalls = 0;
  std::uint64_t min_residency = 0, max_residency = 0;
  std::size_t output_elements = 0;
};

struct SimReport {
  std::string kind;  ///< "ttd" or "matmul"
  PEConfig config;
  std::vector<StageReport> stages;
  std::uint64_t total_cycles = 0;
  std::uint64_t weight_loads = 0, feature_reads = 0, output_writes = 0;
  std::uint64_t reorder_stall_cycles = 0;
  double latency_us = 0.0;

  // Layer description used for traffic accounting.
  std::size_t input_elements = 0;
  std::size_t output_elements = 0;
  std::size_t weight_elements = 0;
  std::size_t weight_scales = 0;
  std::size_t bank_capacity_required = 0;
};

struct TraceEvent {
  std::uint64_t cycle = 0;  ///< cycle relative to the start of the run
  std::string unit;
  std::string action;
};

struct SimOptions {
  /// Receives per-cycle events when set.
  std::function<void(const TraceEvent&)> trace;
};

SimReport run_matmul(std::size_t m, std::size_t n, const PEConfig& cfg, const SimOptions& opts = {},
                     std::size_t tokens = 1);

/// Timing-only TT layer run; throws CapacityError when a bank is too small.
SimReport run_ttd_linear(const PEConfig& cfg, std::span<const std::size_t> n,
                         std::span<const std::size_t> m, std::span<const std::size_t> ranks,
                         const SimOptions& opts = {});

struct ValueRun {
  SimReport report;
  HalfTensor output;  ///< shape (m_1..m_d)
};

/// Value-carrying run: features flow through the ping-pong banks and every PE
/// pass runs the FP16 x INT4 datapath.
ValueRun run_ttd_linear_values(const PEConfig& cfg, const HalfTensor& x,
                               std::span<const QuantCore> qcores, const SimOptions& opts = {});

struct TrafficReport {
  std::uint64_t input_bytes = 0;   ///< fp16 activations in
  std::uint64_t weight_bytes = 0;  ///< INT4 weights, two per byte
  std::uint64_t scale_bytes = 0;   ///< fp32 scales
  std::uint64_t output_bytes = 0;  ///< fp16 activations out
  std::uint64_t external_bytes = 0;
  std::uint64_t internal_bytes = 0;  ///< inter-stage partials, write + read
};

TrafficReport buffer_traffic(const SimReport& report);

}  // namespace ttd
