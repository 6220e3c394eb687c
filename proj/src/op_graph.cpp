#include "ttd/op_graph.hpp"

#include <algorithm>
#include <map>
#include <queue>

namespace ttd {

namespace {

const std::map<OpKind, std::string>& kind_names() {
  static const std::map<OpKind, std::string> names{
      {OpKind::TTDLinear, "TTDLinear"}, {OpKind::Linear, "Linear"}, {OpKind::LN, "LN"},
      {OpKind::EMB, "EMB"},             {OpKind::ACT, "ACT"},       {OpKind::Softmax, "Softmax"},
      {OpKind::BN, "BN"},               {OpKind::Res, "Res"},       {OpKind::TRP, "TRP"},
      {OpKind::Argmax, "Argmax"}};
  return names;
}

const std::map<OpRole, std::string>& role_names() {
  static const std::map<OpRole, std::string> names{
      {OpRole::AttnNorm, "attn_norm"}, {OpRole::QKProj, "qk_proj"},   {OpRole::RopeQ, "rope_q"},
      {OpRole::RopeK, "rope_k"},       {OpRole::Scores, "scores"},    {OpRole::Softmax, "softmax"},
      {OpRole::VProj, "v_proj"},       {OpRole::Context, "context"},  {OpRole::OProj, "o_proj"},
      {OpRole::MlpNorm, "mlp_norm"},   {OpRole::Mlp1, "mlp1"},        {OpRole::Act, "act"},
      {OpRole::Mlp2, "mlp2"},          {OpRole::Mlp3, "mlp3"},        {OpRole::FinalNorm, "final_norm"},
      {OpRole::LmHead, "lm_head"},     {OpRole::Aux, "aux"}};
  return names;
}

template <typename E>
E lookup_name(const std::map<E, std::string>& names, const std::string& s, const char* what) {
  for (const auto& [k, v] : names) {
    if (v == s) return k;
  }
  throw InvalidArgument(std::string("unknown ") + what + " \"" + s + "\"");
}

}  // namespace

std::string to_string(OpKind kind) { return kind_names().at(kind); }
OpKind op_kind_from_string(const std::string& s) { return lookup_name(kind_names(), s, "op kind"); }
std::string to_string(OpRole role) { return role_names().at(role); }
OpRole op_role_from_string(const std::string& s) { return lookup_name(role_names(), s, "op role"); }

bool is_linear(OpKind kind) { return kind == OpKind::TTDLinear || kind == OpKind::Linear; }
bool is_nonlinear(OpKind kind) {
  return kind == OpKind::LN || kind == OpKind::EMB || kind == OpKind::ACT || kind == OpKind::Softmax;
}

std::string OpNode::label() const {
  std::string s = to_string(kind);
  if (is_linear(kind)) {
    if (flags.trp) s += "-TRP";
    if (flags.bn || flags.res || flags.argmax) {
      s += "-";
      if (flags.bn) s += "BN";
      if (flags.res) s += "Res";
      if (flags.argmax) s += "Argmax";
    }
  }
  switch (role) {
    case OpRole::QKProj: return s + "(QK)";
    case OpRole::VProj: return s + "(V)";
    case OpRole::RopeQ: return s + "(Q)";
    case OpRole::RopeK: return s + "(K)";
    default: return s;
  }
}

bool OpNode::attention() const {
  return role == OpRole::Scores || role == OpRole::Softmax || role == OpRole::Context;
}

const OpNode* OperatorGraph::producer(std::size_t tensor) const {
  for (const auto& n : nodes) {
    if (std::find(n.outputs.begin(), n.outputs.end(), tensor) != n.outputs.end()) return &n;
  }
  return nullptr;
}

std::vector<const OpNode*> OperatorGraph::consumers(std::size_t tensor) const {
  std::vector<const OpNode*> out;
  for (const auto& n : nodes) {
    if (std::find(n.inputs.begin(), n.inputs.end(), tensor) != n.inputs.end()) out.push_back(&n);
  }
  return out;
}

namespace {

class Builder {
 public:
  explicit Builder(const ModelConfig& cfg) { g_.config = cfg; }

  std::size_t tensor(std::string name, std::size_t width, std::size_t row_heads = 1,
                     bool square = false) {
    const std::size_t id = g_.tensors.size();
    g_.tensors.push_back({id, std::move(name), width, row_heads, square});
    return id;
  }

  OpNode& node(OpKind kind, OpRole role, int block, std::size_t slot, std::string weight,
               std::vector<std::size_t> in, std::vector<std::size_t> out) {
    OpNode n;
    n.id = g_.nodes.size();
    n.kind = kind;
    n.role = role;
    n.block = block;
    n.slot = slot;
    n.weight = std::move(weight);
    n.inputs = std::move(in);
    n.outputs = std::move(out);
    g_.nodes.push_back(std::move(n));
    return g_.nodes.back();
  }

  /// Linear plus its BN node; returns the BN output tensor.
  std::size_t linear_bn(OpKind kind, OpRole role, int block, std::size_t slot, const std::string& w,
                        std::size_t in, std::size_t in_dim, std::size_t out_dim,
                        const std::string& name, const TTLayerSpec* tt = nullptr) {
    const std::size_t raw = tensor(name + ".raw", out_dim);
    auto& lin = node(kind, role, block, slot, w, {in}, {raw});
    lin.in_dim = in_dim;
    lin.out_dim = out_dim;
    if (kind == OpKind::TTDLinear) lin.tt = *tt;
    const std::size_t out = tensor(name, out_dim);
    node(OpKind::BN, OpRole::Aux, block, slot, w, {raw}, {out});
    return out;
  }

  std::size_t res(int block, std::size_t slot, const std::string& w, std::size_t main,
                  std::size_t residual, ResMode mode, const std::string& name, std::size_t width) {
    const std::size_t out = tensor(name, width);
    node(OpKind::Res, OpRole::Aux, block, slot, w, {main, residual}, {out}).flags.res_mode = mode;
    return out;
  }

  OperatorGraph take() { return std::move(g_); }

 private:
  OperatorGraph g_;
};

}  // namespace

OperatorGraph build_unfused_graph(const ModelConfig& cfg) {
  cfg.validate();
  Builder b(cfg);
  const std::size_t h = cfg.hidden, kv = cfg.kv_dim;
  std::size_t x = b.tensor("embed", h);
  const std::size_t input = x;

  for (std::size_t blk = 0; blk < cfg.blocks; ++blk) {
    const int bi = static_cast<int>(blk);
    const std::string p = "b" + std::to_string(blk) + ".";
    const bool tt = cfg.block_compressed(blk);
    const OpKind heavy = tt ? OpKind::TTDLinear : OpKind::Linear;

    const std::size_t hn = b.tensor(p + "h", h);
    b.node(OpKind::LN, OpRole::AttnNorm, bi, 0, p + "ln1", {x}, {hn});
    const std::size_t qk = b.linear_bn(OpKind::Linear, OpRole::QKProj, bi, 1, p + "qk", hn, h,
                                       h + kv, p + "qk");
    const std::size_t q = b.tensor(p + "q", h);
    b.node(OpKind::EMB, OpRole::RopeQ, bi, 2, "", {qk}, {q});
    const std::size_t k = b.tensor(p + "k", kv);
    b.node(OpKind::EMB, OpRole::RopeK, bi, 3, "", {qk}, {k});
    const std::size_t kt = b.tensor(p + "kT", kv);
    b.node(OpKind::TRP, OpRole::Aux, bi, 4, "", {k}, {kt});
    const std::size_t scores = b.tensor(p + "scores", 1, cfg.heads, true);
    auto& sc = b.node(OpKind::Linear, OpRole::Scores, bi, 4, "", {q, kt}, {scores});
    sc.in_dim = cfg.head_dim();
    sc.out_dim = cfg.heads;
    const std::size_t probs = b.tensor(p + "probs", 1, cfg.heads, true);
    b.node(OpKind::Softmax, OpRole::Softmax, bi, 5, "", {scores}, {probs});
    const std::size_t v = b.linear_bn(OpKind::Linear, OpRole::VProj, bi, 6, p + "v", hn, h, kv,
                                      p + "v");
    const std::size_t ctx = b.tensor(p + "ctx", h);
    auto& cx = b.node(OpKind::Linear, OpRole::Context, bi, 7, "", {probs, v}, {ctx});
    cx.in_dim = cfg.head_dim();
    cx.out_dim = cfg.heads;
    const std::size_t o = b.linear_bn(heavy, OpRole::OProj, bi, 8, p + "o", ctx, h, h, p + "o",
                                      &cfg.tt_o);
    const std::size_t x1 = b.res(bi, 8, p + "o", o, x, ResMode::Add, p + "x1", h);

    const std::size_t h2 = b.tensor(p + "h2", h);
    b.node(OpKind::LN, OpRole::MlpNorm, bi, 9, p + "ln2", {x1}, {h2});
    const std::size_t a = b.linear_bn(heavy, OpRole::Mlp1, bi, 10, p + "mlp1", h2, h,
                                      cfg.mlp_hidden, p + "a", &cfg.tt_mlp1);
    const std::size_t gact = b.tensor(p + "g", cfg.mlp_hidden);
    b.node(OpKind::ACT, OpRole::Act, bi, 11, "", {a}, {gact});
    const std::size_t u0 = b.linear_bn(heavy, OpRole::Mlp2, bi, 12, p + "mlp2", h2, h,
                                       cfg.mlp_hidden, p + "u", &cfg.tt_mlp2);
    const std::size_t u = b.res(bi, 12, p + "mlp2", u0, gact, ResMode::Gate, p + "gated",
                                cfg.mlp_hidden);
    const std::size_t d0 = b.linear_bn(heavy, OpRole::Mlp3, bi, 13, p + "mlp3", u,
                                       cfg.mlp_hidden, h, p + "down", &cfg.tt_mlp3);
    x = b.res(bi, 13, p + "mlp3", d0, x1, ResMode::Add, p + "out", h);
  }

  const std::size_t hf = b.tensor("final.h", h);
  b.node(OpKind::LN, OpRole::FinalNorm, -1, 0, "final.ln", {x}, {hf});
  const std::size_t logits =
      b.linear_bn(OpKind::Linear, OpRole::LmHead, -1, 1, "lm_head", hf, h, cfg.vocab, "logits");
  const std::size_t ids = b.tensor("token_ids", 1);
  b.node(OpKind::Argmax, OpRole::Aux, -1, 1, "", {logits}, {ids});

  auto g = b.take();
  g.input = input;
  g.output = ids;
  return g;
}

namespace {

std::size_t node_index_producing(const OperatorGraph& g, std::size_t tensor) {
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& outs = g.nodes[i].outputs;
    if (std::find(outs.begin(), outs.end(), tensor) != outs.end()) return i;
  }
  return g.nodes.size();
}

std::string describe(const OpNode& n) {
  return n.label() + " (node " + std::to_string(n.id) + ", block " + std::to_string(n.block) + ")";
}

/// Attaches aux node `i` to its host; returns false if it is not an aux node.
bool fold(OperatorGraph& g, std::size_t i) {
  const OpNode aux = g.nodes[i];
  if (aux.kind == OpKind::TRP) {
    const auto readers = g.consumers(aux.outputs.at(0));
    if (readers.size() != 1 || !is_linear(readers[0]->kind)) {
      throw FusionError("TRP " + describe(aux) + " must feed exactly one linear op");
    }
    auto& host = g.nodes[readers[0]->id];
    if (host.flags.trp) throw FusionError("double TRP on " + describe(host));
    std::replace(host.inputs.begin(), host.inputs.end(), aux.outputs[0], aux.inputs.at(0));
    host.flags.trp = true;
  } else if (aux.kind == OpKind::BN || aux.kind == OpKind::Res || aux.kind == OpKind::Argmax) {
    const std::size_t src = aux.inputs.at(0);
    const std::size_t hi = node_index_producing(g, src);
    if (hi == g.nodes.size()) {
      throw FusionError(to_string(aux.kind) + " (node " + std::to_string(aux.id) +
                        ") has no producing op to fuse into");
    }
    auto& host = g.nodes[hi];
    if (!is_linear(host.kind)) {
      throw FusionError("cannot fuse " + to_string(aux.kind) + " into nonlinear op " +
                        describe(host));
    }
    if (g.consumers(src).size() != 1) {
      throw FusionError("output of " + describe(host) + " has other readers; cannot fuse " +
                        to_string(aux.kind));
    }
    auto& f = host.flags;
    if (aux.kind == OpKind::BN) {
      if (f.bn || f.res || f.argmax) throw FusionError("BN after epilogue on " + describe(host));
      f.bn = true;
    } else if (aux.kind == OpKind::Res) {
      if (f.res || f.argmax) throw FusionError("second Res on " + describe(host));
      f.res = true;
      f.res_mode = aux.flags.res_mode;
      host.inputs.push_back(aux.inputs.at(1));
    } else {
      if (host.kind != OpKind::Linear || f.argmax || f.res) {
        throw FusionError("Argmax fuses only into a dense Linear-BN, not " + describe(host));
      }
      f.argmax = true;
    }
    host.outputs = aux.outputs;
  } else {
    return false;
  }
  g.nodes.erase(g.nodes.begin() + static_cast<std::ptrdiff_t>(i));
  return true;
}

}  // namespace

OperatorGraph fuse(OperatorGraph graph) {
  // Node ids are indices; keep them so while folding.
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    if (graph.nodes[i].id != i) throw GraphError("node ids must equal their index");
  }
  for (std::size_t i = 0; i < graph.nodes.size();) {
    if (fold(graph, i)) {
      for (std::size_t j = 0; j < graph.nodes.size(); ++j) graph.nodes[j].id = j;
    } else {
      ++i;
    }
  }
  return graph;
}

OperatorGraph build_graph(const ModelConfig& cfg) { return fuse(build_unfused_graph(cfg)); }

std::vector<std::size_t> topological_order(const OperatorGraph& graph) {
  const std::size_t count = graph.nodes.size();
  std::map<std::size_t, std::size_t> producer;
  for (std::size_t i = 0; i < count; ++i) {
    for (auto t : graph.nodes[i].outputs) {
      if (!producer.emplace(t, i).second) {
        throw GraphError("tensor " + std::to_string(t) + " has two producers");
      }
    }
  }
  std::vector<std::vector<std::size_t>> succ(count);
  std::vector<std::size_t> indeg(count, 0);
  for (std::size_t i = 0; i < count; ++i) {
    for (auto t : graph.nodes[i].inputs) {
      auto it = producer.find(t);
      if (it == producer.end()) continue;
      succ[it->second].push_back(i);
      ++indeg[i];
    }
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < count; ++i) {
    if (indeg[i] == 0) ready.push(i);
  }
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    order.push_back(i);
    for (auto s : succ[i]) {
      if (--indeg[s] == 0) ready.push(s);
    }
  }
  if (order.size() != count) throw GraphError("operator graph has a cycle");
  return order;
}

std::vector<std::string> block_labels(bool compressed) {
  const std::string big = compressed ? "TTDLinear" : "Linear";
  return {"LN",          "Linear-BN(QK)", "EMB(Q)",         "EMB(K)", "Linear-TRP",
          "Softmax",     "Linear-BN(V)",  "Linear",         big + "-BNRes", "LN",
          big + "-BN",   "ACT",           big + "-BNRes",   big + "-BNRes"};
}

std::vector<std::string> output_labels() { return {"LN", "Linear-BNArgmax"}; }

}  // namespace ttd
