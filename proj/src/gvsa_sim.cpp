#include "ttd/gvsa_sim.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <sstream>

#include "ttd/ping_pong.hpp"
#include "ttd/tt_infer.hpp"

namespace ttd {

void PEConfig::validate() const {
  if (t_in == 0 || t_out == 0 || t_n == 0) throw InvalidArgument("PE parallelism must be positive");
  if (t_out % t_n != 0) throw InvalidArgument("T_out must be divisible by T_n");
  if (!(frequency_mhz > 0.0)) throw InvalidArgument("frequency must be positive");
}

PEConfig PEConfig::parse(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  for (std::string item; std::getline(ss, item, ',');) parts.push_back(item);
  if (parts.size() != 4) throw InvalidArgument("PE config must be \"Tin,Tout,Tn,MHz\"");
  PEConfig cfg;
  try {
    cfg.t_in = std::stoul(parts[0]);
    cfg.t_out = std::stoul(parts[1]);
    cfg.t_n = std::stoul(parts[2]);
    cfg.frequency_mhz = std::stod(parts[3]);
  } catch (const std::exception&) {
    throw InvalidArgument("PE config fields must be numeric: " + spec);
  }
  cfg.validate();
  return cfg;
}

std::uint64_t pipeline_fill(const PEConfig& cfg) { return cfg.t_out + kPePipelineDepth; }

StagePlan make_stage_plan(std::size_t stage, std::size_t sum_len, std::size_t out_len,
                          std::size_t time_len, const PEConfig& cfg) {
  cfg.validate();
  if (sum_len == 0 || out_len == 0 || time_len == 0) {
    throw InvalidArgument("stage dimensions must be positive");
  }
  auto ceil_div = [](std::size_t a, std::size_t b) { return (a + b - 1) / b; };
  StagePlan p;
  p.stage = stage;
  p.sum_len = sum_len;
  p.out_len = out_len;
  p.time_len = time_len;
  p.l_sum = ceil_div(sum_len, cfg.t_in);
  p.l_out = ceil_div(out_len, cfg.t_out);
  p.l_time = ceil_div(time_len, cfg.t_out);
  return p;
}

std::vector<StagePlan> plan_ttd_layer(std::span<const std::size_t> n,
                                      std::span<const std::size_t> m,
                                      std::span<const std::size_t> ranks, const PEConfig& cfg) {
  const std::size_t d = n.size();
  if (m.size() != d || ranks.size() != d + 1) throw InvalidArgument("inconsistent TT layout");
  std::vector<StagePlan> plans;
  for (std::size_t k = 0; k < d; ++k) {
    std::size_t time = 1;
    for (std::size_t i = k + 1; i < d; ++i) time *= n[i];
    for (std::size_t j = 0; j < k; ++j) time *= m[j];
    plans.push_back(make_stage_plan(k + 1, ranks[k] * n[k], m[k] * ranks[k + 1], time, cfg));
  }
  return plans;
}

StagePlan plan_matmul(std::size_t m, std::size_t n, const PEConfig& cfg, std::size_t tokens) {
  return make_stage_plan(1, n, m, tokens, cfg);
}

std::uint64_t cycles_analytic(const StagePlan& plan, const PEConfig& cfg) {
  return plan.tiles() * cfg.t_out + pipeline_fill(cfg);
}

namespace {

/// Value-carrying hooks for one stage.
struct StageValues {
  std::function<Fp16Bits(std::size_t sum_idx, std::size_t time_idx)> feature;
  std::span<const std::int8_t> weights;  ///< [sum_len x out_len] row-major
  float scale = 1.0f;
  std::function<void(std::size_t time_idx, std::size_t out_idx, Fp16Bits)> write;
};

struct Slot {
  bool valid = false;
  std::uint64_t tile = 0;
  std::uint64_t cycle = 0;
};

struct GroupState {
  bool active = false;
  std::uint64_t tile = 0;
  std::uint64_t next_tile = 0;
  std::size_t done = 0;
  std::uint64_t activated = 0;
};

struct Forwarded {
  std::uint64_t tile;
  std::size_t t;
  std::uint64_t ready;
  std::vector<Fp16Bits> lanes;
};

class StageEngine {
 public:
  StageEngine(const StagePlan& plan, const PEConfig& cfg, const StageValues* values,
              const SimOptions& opts, std::uint64_t cycle_base)
      : plan_(plan), cfg_(cfg), values_(values), opts_(opts), base_(cycle_base) {}

  StageReport run();

 private:
  struct TileCoord {
    std::size_t lt, lo, ls;
  };
  TileCoord coord(std::uint64_t tile) const {
    const std::uint64_t per_time = static_cast<std::uint64_t>(plan_.l_out) * plan_.l_sum;
    return {static_cast<std::size_t>(tile / per_time),
            static_cast<std::size_t>((tile / plan_.l_sum) % plan_.l_out),
            static_cast<std::size_t>(tile % plan_.l_sum)};
  }

  void emit(std::uint64_t cycle, std::string unit, std::string action) const {
    if (opts_.trace) opts_.trace({base_ + cycle, std::move(unit), std::move(action)});
  }

  std::vector<Fp16Bits> fetch_features(const TileCoord& tc, std::size_t time_idx) const;
  void compute_group(std::size_t g, const TileCoord& tc, std::size_t t,
                     const std::vector<Fp16Bits>& lanes);

  const StagePlan& plan_;
  const PEConfig& cfg_;
  const StageValues* values_;
  const SimOptions& opts_;
  std::uint64_t base_;
  std::vector<float> acc_;  ///< [PE][time slot] partial sums across L_sum
};

std::vector<Fp16Bits> StageEngine::fetch_features(const TileCoord& tc, std::size_t time_idx) const {
  std::vector<Fp16Bits> lanes(cfg_.t_in);
  if (!values_) return lanes;
  for (std::size_t l = 0; l < cfg_.t_in; ++l) {
    const std::size_t s = tc.ls * cfg_.t_in + l;
    if (s < plan_.sum_len) lanes[l] = values_->feature(s, time_idx);
  }
  return lanes;
}

void StageEngine::compute_group(std::size_t g, const TileCoord& tc, std::size_t t,
                                const std::vector<Fp16Bits>& lanes) {
  const std::size_t time_idx = tc.lt * cfg_.t_out + t;
  const bool time_valid = time_idx < plan_.time_len;
  const bool last_chunk = tc.ls + 1 == plan_.l_sum;
  const std::size_t first = g * cfg_.t_n;
  const std::size_t last = first + cfg_.t_n;

  std::vector<std::int8_t> w_hi(cfg_.t_in), w_lo(cfg_.t_in);
  auto gather = [&](std::size_t pe, std::vector<std::int8_t>& w) {
    const std::size_t o = tc.lo * cfg_.t_out + pe;
    for (std::size_t l = 0; l < cfg_.t_in; ++l) {
      const std::size_t s = tc.ls * cfg_.t_in + l;
      w[l] = (o < plan_.out_len && s < plan_.sum_len) ? values_->weights[s * plan_.out_len + o]
                                                      : std::int8_t{0};
    }
  };
  auto accumulate = [&](std::size_t pe, double chunk) {
    float& a = acc_[pe * cfg_.t_out + t];
    if (tc.ls == 0) a = 0.0f;
    a += static_cast<float>(chunk);
    const std::size_t o = tc.lo * cfg_.t_out + pe;
    if (last_chunk && time_valid && o < plan_.out_len) values_->write(time_idx, o, fp16_encode(a));
  };

  if (values_ && time_valid) {
    // Two PEs of a group share each DSP column; an odd PE runs with a zero partner.
    std::size_t pe = first;
    for (; pe + 1 < last; pe += 2) {
      gather(pe, w_hi);
      gather(pe + 1, w_lo);
      const auto r = pe_dual_dot_product(lanes, w_hi, w_lo, values_->scale);
      accumulate(pe, r[0].value);
      accumulate(pe + 1, r[1].value);
    }
    if (pe < last) {
      gather(pe, w_hi);
      accumulate(pe, pe_dot_product_detail(lanes, w_hi, values_->scale).value);
    }
  }
}

StageReport StageEngine::run() {
  const std::size_t t_out = cfg_.t_out;
  const std::size_t t_n = cfg_.t_n;
  const std::size_t groups = cfg_.groups();
  const std::uint64_t tiles = plan_.tiles();
  const std::uint64_t total_loads = tiles * t_out;

  StageReport rep;
  rep.plan = plan_;
  rep.min_residency = std::numeric_limits<std::uint64_t>::max();
  if (values_) acc_.assign(t_out * t_out, 0.0f);

  std::vector<Slot> shadow(t_out), active(t_out);
  std::vector<GroupState> group(groups);
  std::vector<std::deque<Forwarded>> line(groups);

  std::uint64_t next_load = 0;
  std::uint64_t last_mac = 0;
  std::size_t finished = 0;

  for (std::uint64_t c = 0; finished < groups; ++c) {
    for (std::size_t g = 0; g < groups; ++g) {
      auto& gs = group[g];
      if (gs.active && gs.done == t_out) {
        const std::uint64_t resident = c - gs.activated;
        rep.min_residency = std::min(rep.min_residency, resident);
        rep.max_residency = std::max(rep.max_residency, resident);
        gs.active = false;
        if (++gs.next_tile == tiles) ++finished;
      }
      if (!gs.active && gs.next_tile < tiles) {
        bool ready = true;
        for (std::size_t p = g * t_n; p < (g + 1) * t_n && ready; ++p) {
          ready = shadow[p].valid && shadow[p].tile == gs.next_tile && shadow[p].cycle < c;
        }
        if (ready) {
          for (std::size_t p = g * t_n; p < (g + 1) * t_n; ++p) {
            active[p] = shadow[p];
            shadow[p].valid = false;
          }
          gs.active = true;
          gs.tile = gs.next_tile;
          gs.done = 0;
          gs.activated = c;
          emit(c, "group" + std::to_string(g), "activate tile=" + std::to_string(gs.tile));
        }
      }
      if (gs.active && gs.done < t_out) {
        const auto tc = coord(gs.tile);
        const std::size_t t = gs.done;
        std::vector<Fp16Bits> lanes;
        if (g == 0) {
          const std::size_t time_idx = tc.lt * t_out + t;
          if (time_idx < plan_.time_len) {
            ++rep.feature_reads;
            lanes = fetch_features(tc, time_idx);
          } else {
            lanes.assign(cfg_.t_in, Fp16Bits{});
          }
        } else {
          auto& q = line[g];
          if (q.empty() || q.front().tile != gs.tile || q.front().t != t || q.front().ready > c) {
            continue;  // feature not here yet
          }
          lanes = std::move(q.front().lanes);
          q.pop_front();
        }
        compute_group(g, tc, t, lanes);
        emit(c, "group" + std::to_string(g),
             "mac tile=" + std::to_string(gs.tile) + " t=" + std::to_string(t));
        rep.mac_vectors += t_n;
        last_mac = c;
        if (tc.ls + 1 == plan_.l_sum && tc.lt * t_out + t < plan_.time_len) {
          for (std::size_t p = g * t_n; p < (g + 1) * t_n; ++p) {
            if (tc.lo * t_out + p < plan_.out_len) ++rep.output_writes;
          }
        }
        if (g + 1 < groups) line[g + 1].push_back({gs.tile, t, c + t_n, std::move(lanes)});
        ++gs.done;
      }
    }

    if (next_load < total_loads) {
      const std::size_t p = static_cast<std::size_t>(next_load % t_out);
      if (!shadow[p].valid) {
        shadow[p] = {true, next_load / t_out, c};
        emit(c, "load", "pe=" + std::to_string(p) + " tile=" + std::to_string(next_load / t_out));
        ++next_load;
        ++rep.weight_loads;
      } else {
        ++rep.load_port_stalls;
      }
    }
  }

  rep.cycles = last_mac + 1 + kPePipelineDepth;
  rep.fill_cycles = rep.cycles - tiles * t_out;
  rep.compute_cycles = last_mac + 1;
  rep.output_elements = plan_.out_len * plan_.time_len;
  return rep;
}

struct Layout {
  std::vector<std::size_t> n, m, ranks;
};

void check_layout(const Layout& l) {
  if (l.n.size() < 2 || l.m.size() != l.n.size() || l.ranks.size() != l.n.size() + 1) {
    throw InvalidArgument("TT layout needs d >= 2 with d+1 ranks");
  }
  if (l.ranks.front() != 1 || l.ranks.back() != 1) throw InvalidArgument("r_0 and r_d must be 1");
  for (auto v : l.n) if (v == 0) throw InvalidArgument("factors must be positive");
  for (auto v : l.m) if (v == 0) throw InvalidArgument("factors must be positive");
  for (auto v : l.ranks) if (v == 0) throw InvalidArgument("ranks must be positive");
}

void finalize(SimReport& rep) {
  rep.total_cycles = 0;
  for (const auto& s : rep.stages) {
    rep.total_cycles += s.cycles + s.reorder_stall_cycles;
    rep.weight_loads += s.weight_loads;
    rep.feature_reads += s.feature_reads;
    rep.output_writes += s.output_writes;
    rep.reorder_stall_cycles += s.reorder_stall_cycles;
  }
  rep.latency_us = static_cast<double>(rep.total_cycles) / rep.config.frequency_mhz;
}

/// Block/address of element (time_idx over t_{k-1}, out_idx over (j_k, r_k)) in P_k.
struct Placement {
  std::size_t block, address;
};

Placement place(const Layout& l, const StagePlan& plan, std::size_t k, std::size_t time_idx,
                std::size_t out_idx) {
  const std::size_t d = l.n.size();
  const std::size_t r_out = l.ranks[k + 1];
  const std::size_t j = out_idx / r_out;
  const std::size_t r = out_idx % r_out;
  const std::size_t n_next = k + 1 < d ? l.n[k + 1] : 1;
  const std::size_t rest_len = plan.time_len / n_next;
  const std::size_t i_next = time_idx / rest_len;
  const std::size_t rest = time_idx % rest_len;
  return {r * n_next + i_next, rest * l.m[k] + j};
}

SimReport run_layer(const PEConfig& cfg, const Layout& layout, std::span<const QuantCore> qcores,
                    const HalfTensor* x, HalfTensor* y, const SimOptions& opts) {
  cfg.validate();
  check_layout(layout);
  const std::size_t d = layout.n.size();
  const auto plans = plan_ttd_layer(layout.n, layout.m, layout.ranks, cfg);

  SimReport rep;
  rep.kind = "ttd";
  rep.config = cfg;
  rep.input_elements = product(layout.n);
  rep.output_elements = product(layout.m);
  rep.weight_elements = tt_parameter_count(layout.n, layout.m, layout.ranks);
  rep.weight_scales = d;
  for (std::size_t k = 0; k + 1 < d; ++k) {
    rep.bank_capacity_required =
        std::max(rep.bank_capacity_required, plans[k + 1].sum_len * plans[k + 1].time_len);
  }
  if (cfg.bank_capacity != 0 && rep.bank_capacity_required > cfg.bank_capacity) {
    throw CapacityError("ping-pong bank needs " + std::to_string(rep.bank_capacity_required) +
                            " elements, configured " + std::to_string(cfg.bank_capacity),
                        rep.bank_capacity_required, cfg.bank_capacity);
  }

  const std::size_t bank_count = cfg.double_buffering ? 2 : 1;
  PingPongBuffer buffer(bank_count, cfg.bank_capacity);
  std::vector<Fp16Bits> out_buf;
  if (y) out_buf.assign(rep.output_elements, Fp16Bits{});

  std::uint64_t cycle_base = 0;
  for (std::size_t k = 0; k < d; ++k) {
    const auto& plan = plans[k];
    const bool first = k == 0;
    const bool last = k + 1 == d;
    const std::optional<std::size_t> read_bank =
        first ? std::nullopt : std::optional<std::size_t>(cfg.double_buffering ? (k - 1) % 2 : 0);
    std::optional<std::size_t> write_bank;
    if (!last) write_bank = cfg.double_buffering ? k % 2 : 0;
    // With one bank a middle stage cannot write where it reads; its outputs are
    // staged and a reorder pass rewrites the bank after the stage.
    const bool staged = write_bank && read_bank && *write_bank == *read_bank;

    std::vector<std::pair<Placement, Fp16Bits>> staging;
    StageValues values;
    if (x) {
      if (!staged && write_bank) {
        buffer.configure(*write_bank, plans[k + 1].sum_len, plans[k + 1].time_len);
      }
      buffer.begin_stage(read_bank, staged ? std::nullopt : write_bank);
      const std::size_t time_len = plan.time_len;
      if (first) {
        values.feature = [x, time_len](std::size_t s, std::size_t t) {
          return (*x)[s * time_len + t];
        };
      } else {
        values.feature = [&buffer, b = *read_bank](std::size_t s, std::size_t t) {
          return buffer.read(b, s, t);
        };
      }
      values.weights = qcores[k].values.data();
      values.scale = qcores[k].scale;
      values.write = [&, k](std::size_t t, std::size_t o, Fp16Bits v) {
        const auto pl = place(layout, plan, k, t, o);
        if (last) {
          out_buf[pl.address] = v;
        } else if (staged) {
          staging.push_back({pl, v});
        } else {
          buffer.write(*write_bank, pl.block, pl.address, v);
        }
      };
    }

    StageEngine engine(plan, cfg, x ? &values : nullptr, opts, cycle_base);
    auto stage_rep = engine.run();

    if (x) buffer.end_stage();
    if (staged) {
      stage_rep.reorder_stall_cycles = (stage_rep.output_elements + cfg.t_out - 1) / cfg.t_out;
      if (opts.trace) {
        opts.trace({cycle_base + stage_rep.cycles, "reorder",
                    "stall " + std::to_string(stage_rep.reorder_stall_cycles)});
      }
      if (x) {
        buffer.configure(*write_bank, plans[k + 1].sum_len, plans[k + 1].time_len);
        buffer.begin_stage(std::nullopt, write_bank);
        for (const auto& [pl, v] : staging) buffer.write(*write_bank, pl.block, pl.address, v);
        buffer.end_stage();
      }
    }
    cycle_base += stage_rep.cycles + stage_rep.reorder_stall_cycles;
    rep.stages.push_back(stage_rep);
  }
  finalize(rep);
  if (y) *y = HalfTensor(Shape(layout.m), std::move(out_buf));
  return rep;
}

}  // namespace

SimReport run_matmul(std::size_t m, std::size_t n, const PEConfig& cfg, const SimOptions& opts,
                     std::size_t tokens) {
  if (m == 0 || n == 0 || tokens == 0) throw InvalidArgument("matmul dims must be >= 1");
  const auto plan = plan_matmul(m, n, cfg, tokens);
  SimReport rep;
  rep.kind = "matmul";
  rep.config = cfg;
  rep.input_elements = n * tokens;
  rep.output_elements = m * tokens;
  rep.weight_elements = m * n;
  rep.weight_scales = 1;
  StageEngine engine(plan, cfg, nullptr, opts, 0);
  rep.stages.push_back(engine.run());
  finalize(rep);
  return rep;
}

SimReport run_ttd_linear(const PEConfig& cfg, std::span<const std::size_t> n,
                         std::span<const std::size_t> m, std::span<const std::size_t> ranks,
                         const SimOptions& opts) {
  Layout layout{{n.begin(), n.end()}, {m.begin(), m.end()}, {ranks.begin(), ranks.end()}};
  return run_layer(cfg, layout, {}, nullptr, nullptr, opts);
}

ValueRun run_ttd_linear_values(const PEConfig& cfg, const HalfTensor& x,
                               std::span<const QuantCore> qcores, const SimOptions& opts) {
  const auto cl = core_layout(qcores);
  if (x.numel() != product(cl.n)) {
    throw ShapeError("input has " + std::to_string(x.numel()) + " elements, cores expect " +
                     std::to_string(product(cl.n)));
  }
  ValueRun run;
  run.report = run_layer(cfg, Layout{cl.n, cl.m, cl.ranks}, qcores, &x, &run.output, opts);
  return run;
}

TrafficReport buffer_traffic(const SimReport& report) {
  TrafficReport t;
  t.input_bytes = static_cast<std::uint64_t>(report.input_elements) * 2;
  t.weight_bytes = (static_cast<std::uint64_t>(report.weight_elements) + 1) / 2;
  t.scale_bytes = static_cast<std::uint64_t>(report.weight_scales) * 4;
  t.output_bytes = static_cast<std::uint64_t>(report.output_elements) * 2;
  t.external_bytes = t.input_bytes + t.weight_bytes + t.scale_bytes + t.output_bytes;
  for (std::size_t k = 0; k + 1 < report.stages.size(); ++k) {
    t.internal_bytes += static_cast<std::uint64_t>(report.stages[k].output_elements) * 2 * 2;
  }
  return t;
}

}  // namespace ttd
