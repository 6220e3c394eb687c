#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "support/gen.hpp"
#include "ttd/executor.hpp"
#include "ttd/instructions.hpp"
#include "ttd/latency.hpp"
#include "ttd/model_config.hpp"
#include "ttd/op_graph.hpp"

using namespace ttd;
using ttd::testing::Gen;
using ttd::testing::max_rel_diff;

namespace {

const std::vector<std::string> kTableBlockLabels{
    "LN",     "Linear-BN(QK)",   "EMB(Q)", "EMB(K)",          "Linear-TRP",      "Softmax", "Linear-BN(V)",
    "Linear", "TTDLinear-BNRes", "LN",     "TTDLinear-BN",    "ACT",             "TTDLinear-BNRes",
    "TTDLinear-BNRes"};

std::vector<std::string> labels(const OperatorGraph& g) {
  std::vector<std::string> out;
  for (auto i : topological_order(g)) out.push_back(g.nodes[i].label());
  return out;
}

std::vector<std::size_t> sample_tokens(Gen& g, const ModelConfig& cfg, std::size_t count) {
  std::vector<std::size_t> t(count);
  for (auto& v : t) v = g.uniform(0, cfg.vocab - 1);
  return t;
}

}  // namespace

// ---------------------------------------------------------------- presets

TEST(Presets, ShapesAndCounts) {
  const auto glm = model_preset("chatglm3-6b");
  EXPECT_EQ(glm.blocks, 28u);
  EXPECT_EQ(glm.compressed_blocks, 15u);
  EXPECT_EQ(glm.kv_dim, 256u);
  const auto llama = model_preset("llama2-7b");
  EXPECT_EQ(llama.blocks, 32u);
  EXPECT_EQ(llama.compressed_blocks, 19u);
  EXPECT_THROW(model_preset("gpt"), InvalidArgument);
  for (const auto& name : preset_names()) EXPECT_NO_THROW(model_preset(name).validate());
}

TEST(Presets, BlockCompressionRatio) {
  EXPECT_NEAR(block_compression_ratio(model_preset("chatglm3-6b")), 10.72, 0.01);
  EXPECT_NEAR(block_compression_ratio(model_preset("llama2-7b")), 4.01, 0.01);
}

TEST(Presets, JsonRoundTripAndShippedFiles) {
  for (const auto& name : preset_names()) {
    const auto cfg = model_preset(name);
    EXPECT_EQ(to_json(model_config_from_json(to_json(cfg))), to_json(cfg));
  }
  for (const char* name : {"chatglm3-6b", "llama2-7b"}) {
    std::ifstream m(std::string(TTD_DATA_DIR) + "/" + name + ".model.json");
    ASSERT_TRUE(m) << name;
    EXPECT_EQ(to_json(model_config_from_json(nlohmann::json::parse(m))), to_json(model_preset(name)));
    std::ifstream l(std::string(TTD_DATA_DIR) + "/" + name + ".latency.json");
    ASSERT_TRUE(l) << name;
    EXPECT_EQ(to_json(latency_table_from_json(nlohmann::json::parse(l))), to_json(latency_preset(name)));
  }
}

TEST(Presets, InvalidConfigsRejected) {
  auto cfg = model_preset("llama2-7b-toy");
  cfg.compressed_blocks = 2;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = model_preset("llama2-7b-toy");
  cfg.tt_o.m = {4, 4, 2};
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  auto j = to_json(model_preset("chatglm3-6b"));
  j["activation"] = "relu";
  EXPECT_THROW(model_config_from_json(j), InvalidArgument);
}

// ---------------------------------------------------------------- graph

TEST(Graph, ChatglmHas28BlocksOf14PlusOutput) {
  const auto g = build_graph(model_preset("chatglm3-6b"));
  EXPECT_EQ(g.nodes.size(), 28u * 14 + 2);
}

TEST(Graph, ToyHas16Ops) { EXPECT_EQ(build_graph(model_preset("chatglm3-6b-toy")).nodes.size(), 16u); }

TEST(Graph, LlamaBlockLabelsMatchTableRows) {
  const auto cfg = model_preset("llama2-7b");
  const auto all = labels(build_graph(cfg));
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::vector<std::string> got(all.begin() + static_cast<std::ptrdiff_t>(b * 14),
                                       all.begin() + static_cast<std::ptrdiff_t>(b * 14 + 14));
    if (b < cfg.compressed_blocks) {
      EXPECT_EQ(got, kTableBlockLabels) << b;
    } else {
      EXPECT_EQ(got, block_labels(false)) << b;
    }
  }
  EXPECT_EQ(std::vector<std::string>(all.end() - 2, all.end()), output_labels());
  EXPECT_EQ(block_labels(true), kTableBlockLabels);
}

TEST(Fusion, LinearBnBecomesLinearBn) {
  const auto unfused = build_unfused_graph(model_preset("chatglm3-6b-toy"));
  EXPECT_EQ(unfused.nodes[1].label(), "Linear(QK)");
  EXPECT_EQ(unfused.nodes[2].kind, OpKind::BN);
  const auto fused = fuse(unfused);
  EXPECT_EQ(fused.nodes[1].label(), "Linear-BN(QK)");
}

TEST(Fusion, Idempotent) {
  for (const auto& name : preset_names()) {
    const auto once = build_graph(model_preset(name));
    const auto twice = fuse(once);
    ASSERT_EQ(once.nodes.size(), twice.nodes.size());
    for (std::size_t i = 0; i < once.nodes.size(); ++i) {
      EXPECT_EQ(once.nodes[i].label(), twice.nodes[i].label());
      EXPECT_EQ(once.nodes[i].inputs, twice.nodes[i].inputs);
      EXPECT_EQ(once.nodes[i].outputs, twice.nodes[i].outputs);
    }
  }
}

TEST(Fusion, ResOntoNonlinearIsRejected) {
  auto g = build_unfused_graph(model_preset("llama2-7b-toy"));
  // Point the first Res node's main operand at the LN output.
  for (auto& n : g.nodes) {
    if (n.kind == OpKind::Res) {
      n.inputs[0] = g.nodes[0].outputs[0];
      break;
    }
  }
  try {
    fuse(g);
    FAIL() << "expected FusionError";
  } catch (const FusionError& e) {
    EXPECT_NE(std::string(e.what()).find("LN"), std::string::npos);
  }
}

TEST(Fusion, BnOntoNonlinearIsRejected) {
  auto g = build_unfused_graph(model_preset("llama2-7b-toy"));
  for (auto& n : g.nodes) {
    if (n.kind == OpKind::BN) {
      n.inputs[0] = g.nodes[0].outputs[0];
      break;
    }
  }
  EXPECT_THROW(fuse(g), FusionError);
}

TEST(Fusion, PreservesFunctionalOutput) {
  Gen g(81);
  for (const char* name : {"chatglm3-6b-toy", "llama2-7b-toy"}) {
    for (int trial = 0; trial < 3; ++trial) {
      const auto cfg = model_preset(name);
      auto w = random_weights(cfg, 1000 + static_cast<std::uint64_t>(trial));
      compress_weights(w, cfg, 4);
      const auto tokens = sample_tokens(g, cfg, g.uniform(1, 6));
      for (auto mode : {ExecMode::Dense, ExecMode::TT}) {
        const auto a = functional_execute(build_unfused_graph(cfg), w, tokens, mode);
        const auto b = functional_execute(build_graph(cfg), w, tokens, mode);
        EXPECT_LT(max_rel_diff(a.logits, b.logits), 1e-9);
        EXPECT_EQ(a.token_ids, b.token_ids);
      }
    }
  }
}

TEST(Graph, CycleIsDetected) {
  auto g = build_graph(model_preset("chatglm3-6b-toy"));
  g.nodes[0].inputs.push_back(g.nodes[3].outputs[0]);
  EXPECT_THROW(topological_order(g), GraphError);
}

// ---------------------------------------------------------------- instructions

TEST(Instructions, SingleLinear) {
  OperatorGraph g;
  g.config = model_preset("chatglm3-6b-toy");
  g.tensors = {{0, "x", 64}, {1, "y", 32}};
  OpNode n;
  n.kind = OpKind::Linear;
  n.role = OpRole::VProj;
  n.inputs = {0};
  n.outputs = {1};
  n.in_dim = 64;
  n.out_dim = 32;
  g.nodes = {n};
  g.input = 0;
  g.output = 1;
  const auto s = emit_instructions(g);
  ASSERT_EQ(s.instructions.size(), 1u);
  EXPECT_NE(s.instructions[0].in_addrs[0], s.instructions[0].out_addrs[0]);
}

TEST(Instructions, LiveTensorsNeverOverlapAndReadsFollowWrites) {
  for (const auto& name : preset_names()) {
    const auto g = build_graph(model_preset(name));
    EmitOptions opts;
    opts.tokens = 3;
    const auto s = emit_instructions(g, opts);
    struct Live {
      std::uint64_t addr, size;
    };
    std::map<std::uint64_t, std::uint64_t> written;  // addr -> size
    written[s.input_addr] = g.tensors[g.input].elements(3);
    for (const auto& ins : s.instructions) {
      for (std::size_t i = 0; i < ins.in_addrs.size(); ++i) {
        auto it = written.find(ins.in_addrs[i]);
        ASSERT_NE(it, written.end()) << ins.label;
        EXPECT_EQ(it->second, ins.in_sizes[i]);
      }
      for (std::size_t i = 0; i < ins.out_addrs.size(); ++i) {
        for (std::size_t j = 0; j < ins.in_addrs.size(); ++j) {
          const bool disjoint = ins.out_addrs[i] + ins.out_sizes[i] <= ins.in_addrs[j] ||
                                ins.in_addrs[j] + ins.in_sizes[j] <= ins.out_addrs[i];
          EXPECT_TRUE(disjoint) << ins.label;
        }
        written[ins.out_addrs[i]] = ins.out_sizes[i];
      }
    }
  }
}

TEST(Instructions, AddressesDisjointWhileLive) {
  const auto g = build_graph(model_preset("llama2-7b-toy"));
  EmitOptions opts;
  opts.tokens = 4;
  const auto s = emit_instructions(g, opts);
  const auto order = topological_order(g);
  // Recover tensor lifetimes and check pairwise disjointness for overlapping ones.
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> life;  // tensor -> [def, last]
  std::map<std::size_t, std::uint64_t> addr;
  life[g.input] = {0, 0};
  addr[g.input] = s.input_addr;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const auto& n = g.nodes[order[pos]];
    for (auto t : n.inputs) life[t].second = pos;
    for (std::size_t i = 0; i < n.outputs.size(); ++i) {
      life[n.outputs[i]] = {pos, pos};
      addr[n.outputs[i]] = s.instructions[pos].out_addrs[i];
    }
  }
  life[g.output].second = order.size();
  for (const auto& [a, la] : life) {
    for (const auto& [b, lb] : life) {
      if (a >= b) continue;
      if (la.second < lb.first || lb.second < la.first) continue;
      const auto sa = g.tensors[a].elements(4), sb = g.tensors[b].elements(4);
      EXPECT_TRUE(addr[a] + sa <= addr[b] || addr[b] + sb <= addr[a]) << g.tensors[a].name << " vs " << g.tensors[b].name;
    }
  }
}

TEST(Instructions, ResidualReadsAliasBlockInput) {
  const auto g = build_graph(model_preset("chatglm3-6b-toy"));
  const auto s = emit_instructions(g);
  const auto& ln = s.instructions[0];
  ASSERT_EQ(ln.label, "LN");
  const auto& o = s.instructions[8];
  ASSERT_EQ(o.label, "TTDLinear-BNRes");
  ASSERT_EQ(o.in_addrs.size(), 2u);
  EXPECT_EQ(o.in_addrs[1], ln.in_addrs[0]);
  // The down projection's residual is the attention output written by slot 8.
  EXPECT_EQ(s.instructions[13].in_addrs[1], o.out_addrs[0]);
}

TEST(Instructions, SerializeParseRoundTrip) {
  for (const auto& name : preset_names()) {
    const auto s = emit_instructions(build_graph(model_preset(name)));
    const auto text = serialize(s);
    const auto back = parse_instructions(text);
    ASSERT_EQ(back.instructions.size(), s.instructions.size());
    for (std::size_t i = 0; i < s.instructions.size(); ++i) EXPECT_EQ(back.instructions[i], s.instructions[i]);
    EXPECT_EQ(serialize(back), text);
  }
  EXPECT_THROW(parse_instructions("{\"seq\": 0}\n"), FormatError);
}

TEST(Instructions, Deterministic) {
  const auto a = serialize(emit_instructions(build_graph(model_preset("llama2-7b"))));
  const auto b = serialize(emit_instructions(build_graph(model_preset("llama2-7b"))));
  EXPECT_EQ(a, b);
}

// ---------------------------------------------------------------- latency

TEST(Latency, ChatglmReconstruction) {
  const auto cfg = model_preset("chatglm3-6b");
  const auto table = latency_preset(cfg.name);
  EXPECT_NEAR(table.block_sum_us(), 313.11, 1e-9);
  const auto est = estimate_latency(emit_instructions(build_graph(cfg)).instructions, table);
  const double oracle = (15 * 313.11 + 13 * 2.19 * 313.11 + 13.78 + 701.18) / 1000.0;
  EXPECT_NEAR(est.first_token_ms, oracle, 1e-9);
  EXPECT_NEAR(est.first_token_ms, 14.33, 0.03);
  EXPECT_NEAR(est.tokens_per_s, 1000.0 / est.first_token_ms, 1e-9);
}

TEST(Latency, LlamaReconstructionDoesNotClose) {
  const auto cfg = model_preset("llama2-7b");
  const auto table = latency_preset(cfg.name);
  EXPECT_NEAR(table.block_sum_us(), 413.46, 1e-9);
  const auto est = estimate_latency(emit_instructions(build_graph(cfg)).instructions, table);
  const double oracle = (19 * 413.46 + 13 * 1.78 * 413.46 + 12.28 + 349.16) / 1000.0;
  EXPECT_NEAR(est.first_token_ms, oracle, 1e-9);
  EXPECT_GT(std::abs(est.first_token_ms - 15.20) / 15.20, 0.1);
}

TEST(Latency, EmptyStreamIsZero) {
  const auto est = estimate_latency({}, latency_preset("chatglm3-6b"));
  EXPECT_EQ(est.first_token_ms, 0.0);
  EXPECT_EQ(est.tokens_per_s, 0.0);
}

TEST(Latency, AdditiveOverSegments) {
  Gen g(91);
  const auto table = latency_preset("llama2-7b");
  const auto s = emit_instructions(build_graph(model_preset("llama2-7b"))).instructions;
  const double whole = estimate_latency(s, table, 7).decode_step_ms;
  for (int t = 0; t < 20; ++t) {
    std::vector<std::size_t> cuts{0, s.size()};
    for (int c = 0; c < 4; ++c) cuts.push_back(g.uniform(0, s.size()));
    std::sort(cuts.begin(), cuts.end());
    double sum = 0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      sum += estimate_latency(std::span(s).subspan(cuts[i], cuts[i + 1] - cuts[i]), table, 7).decode_step_ms;
    }
    EXPECT_NEAR(sum, whole, 1e-9 * whole);
  }
}

TEST(Latency, ToyEqualsSumOfItsOps) {
  const auto table = latency_preset("chatglm3-6b-toy");
  const auto est = estimate_latency(emit_instructions(build_graph(model_preset("chatglm3-6b-toy"))).instructions, table);
  EXPECT_NEAR(est.first_token_ms * 1000.0, table.block_sum_us() + table.output_sum_us(), 1e-9);
}

TEST(Latency, KvLengthScalesAttentionOnly) {
  const auto table = latency_preset("chatglm3-6b");
  const auto s = emit_instructions(build_graph(model_preset("chatglm3-6b-toy"))).instructions;
  const auto one = estimate_latency(s, table, 1);
  const auto ten = estimate_latency(s, table, 10);
  EXPECT_NEAR((ten.decode_step_ms - one.decode_step_ms) * 1000.0, 9 * (8.24 + 26.08 + 8.99), 1e-9);
  EXPECT_EQ(ten.first_token_ms, one.first_token_ms);
}

TEST(Latency, BaselineBlockCostsSpeedupTimesBlockSum) {
  auto cfg = model_preset("chatglm3-6b-toy");
  cfg.compressed_blocks = 0;
  const auto table = latency_preset(cfg.name);
  const auto s = emit_instructions(build_graph(cfg)).instructions;
  const auto est = estimate_latency(s, table);
  EXPECT_NEAR(est.first_token_ms * 1000.0, 2.19 * table.block_sum_us() + table.output_sum_us(), 1e-9);
}

TEST(Latency, MissingEntryNamesTheOp) {
  auto table = latency_preset("chatglm3-6b");
  table.block.resize(5);
  const auto s = emit_instructions(build_graph(model_preset("chatglm3-6b-toy"))).instructions;
  try {
    estimate_latency(s, table);
    FAIL() << "expected error";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("Softmax"), std::string::npos);
  }
}

// ---------------------------------------------------------------- executor

TEST(Executor, SoftmaxRowsSumToOne) {
  Gen g(101);
  for (int t = 0; t < 50; ++t) {
    const std::size_t heads = g.uniform(1, 4), tokens = g.uniform(1, 9);
    auto s = g.normals(heads * tokens * tokens);
    for (auto& v : s) v *= 20;
    softmax_causal_inplace(s, heads, tokens);
    for (std::size_t r = 0; r < heads * tokens; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < tokens; ++c) sum += s[r * tokens + c];
      EXPECT_NEAR(sum, 1.0, 1e-9);
      for (std::size_t c = r % tokens + 1; c < tokens; ++c) EXPECT_EQ(s[r * tokens + c], 0.0);
    }
  }
}

TEST(Executor, RmsNormOfZeroIsZero) {
  const std::vector<double> zero(8, 0.0), gain(4, 1.0);
  for (double v : rms_norm(zero, 4, gain)) EXPECT_EQ(v, 0.0);
  const std::vector<double> x{3, 4, 0, 0};
  const auto y = rms_norm(x, 4, gain);
  EXPECT_NEAR(y[0], 3 / std::sqrt(25.0 / 4 + kNormEpsilon), 1e-15);
}

TEST(Executor, ZeroWeightsGiveZeroLogits) {
  const auto cfg = model_preset("llama2-7b-toy");
  auto w = random_weights(cfg, 1);
  for (auto& v : w.embedding.data()) v = 0;
  for (auto& [k, lw] : w.linears) {
    for (auto& v : lw.dense.data()) v = 0;
    std::fill(lw.bn_bias.begin(), lw.bn_bias.end(), 0.0);
  }
  const auto r = functional_execute(build_graph(cfg), w, {1, 2, 3});
  for (double v : r.logits) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.token_ids, (std::vector<std::size_t>{0, 0, 0}));
}

TEST(Executor, FullRankCoresMatchDenseTwin) {
  Gen g(102);
  for (const char* name : {"chatglm3-6b-toy", "llama2-7b-toy"}) {
    const auto cfg = model_preset(name);
    auto w = random_weights(cfg, 7);
    compress_weights(w, cfg, 1 << 20);
    const auto graph = build_graph(cfg);
    const auto tokens = sample_tokens(g, cfg, 5);
    const auto dense = functional_execute(graph, w, tokens, ExecMode::Dense);
    const auto tt = functional_execute(graph, w, tokens, ExecMode::TT);
    EXPECT_LT(max_rel_diff(tt.logits, dense.logits), 1e-8) << name;
  }
}

TEST(Executor, QuantizedRunIsFinite) {
  const auto cfg = model_preset("chatglm3-6b-toy");
  auto w = random_weights(cfg, 9);
  compress_weights(w, cfg);
  const auto graph = build_graph(cfg);
  const auto q = functional_execute(graph, w, {3, 1, 4, 1, 5}, ExecMode::Quant);
  for (double v : q.logits) EXPECT_TRUE(std::isfinite(v));
}

TEST(Executor, RejectsLargeModelsAndBadTokens) {
  const auto cfg = model_preset("chatglm3-6b-toy");
  const auto w = random_weights(cfg, 3);
  EXPECT_THROW(functional_execute(build_graph(cfg), w, {cfg.vocab}), IndexError);
  EXPECT_THROW(random_weights(model_preset("chatglm3-6b"), 1), InvalidArgument);
}
