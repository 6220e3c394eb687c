#include "ttd/instructions.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include <json.hpp>

namespace ttd {

namespace {

/// First-fit allocator over a flat address space.
class Arena {
 public:
  std::uint64_t allocate(std::uint64_t size) {
    for (auto it = free_.begin(); it != free_.end(); ++it) {
      if (it->second >= size) {
        const std::uint64_t addr = it->first;
        if (it->second == size) {
          free_.erase(it);
        } else {
          free_.insert({addr + size, it->second - size});
          free_.erase(it);
        }
        return addr;
      }
    }
    const std::uint64_t addr = top_;
    top_ += size;
    return addr;
  }

  void release(std::uint64_t addr, std::uint64_t size) {
    auto [it, fresh] = free_.insert({addr, size});
    if (!fresh) throw GraphError("double free in activation arena");
    auto next = std::next(it);
    if (next != free_.end() && it->first + it->second == next->first) {
      it->second += next->second;
      free_.erase(next);
    }
    if (it != free_.begin()) {
      auto prev = std::prev(it);
      if (prev->first + prev->second == it->first) {
        prev->second += it->second;
        free_.erase(it);
      }
    }
  }

  std::uint64_t high_water() const noexcept { return top_; }

 private:
  std::map<std::uint64_t, std::uint64_t> free_;  ///< addr -> size
  std::uint64_t top_ = 0;
};

std::vector<std::array<std::size_t, 3>> loop_counts(const OpNode& n, std::size_t tokens,
                                                    const PEConfig& pe) {
  std::vector<std::array<std::size_t, 3>> loops;
  if (n.kind == OpKind::TTDLinear) {
    const auto ranks = n.tt->ranks();
    for (const auto& p : plan_ttd_layer(n.tt->n, n.tt->m, ranks, pe)) {
      const auto scaled = make_stage_plan(p.stage, p.sum_len, p.out_len, p.time_len * tokens, pe);
      loops.push_back({scaled.l_time, scaled.l_out, scaled.l_sum});
    }
  } else if (n.kind == OpKind::Linear && !n.attention()) {
    const auto p = plan_matmul(n.out_dim, n.in_dim, pe, tokens);
    loops.push_back({p.l_time, p.l_out, p.l_sum});
  }
  return loops;
}

}  // namespace

InstructionStream emit_instructions(const OperatorGraph& graph, const EmitOptions& opts) {
  if (opts.tokens == 0) throw InvalidArgument("tokens must be positive");
  opts.pe.validate();
  const auto order = topological_order(graph);

  std::map<std::size_t, std::size_t> last_use;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    for (auto t : graph.nodes[order[pos]].inputs) last_use[t] = pos;
  }
  auto size_of = [&](std::size_t t) {
    return static_cast<std::uint64_t>(graph.tensors.at(t).elements(opts.tokens));
  };

  InstructionStream stream;
  Arena arena;
  std::map<std::size_t, std::uint64_t> addr;
  addr[graph.input] = arena.allocate(size_of(graph.input));
  stream.input_addr = addr[graph.input];

  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const auto& n = graph.nodes[order[pos]];
    Instruction ins;
    ins.seq = pos;
    ins.kind = n.kind;
    ins.role = n.role;
    ins.label = n.label();
    ins.block = n.block;
    ins.slot = n.slot;
    ins.compressed = n.kind == OpKind::TTDLinear;
    ins.attention = n.attention();
    ins.flags = n.flags;
    ins.in_dim = n.in_dim;
    ins.out_dim = n.out_dim;
    ins.tokens = opts.tokens;
    if (n.tt) {
      ins.n = n.tt->n;
      ins.m = n.tt->m;
      ins.ranks = n.tt->ranks();
    }
    ins.loops = loop_counts(n, opts.tokens, opts.pe);

    for (auto t : n.inputs) {
      auto it = addr.find(t);
      if (it == addr.end()) {
        throw GraphError("instruction " + std::to_string(pos) + " (" + ins.label +
                         ") reads tensor " + graph.tensors.at(t).name + " before it is written");
      }
      ins.in_addrs.push_back(it->second);
      ins.in_sizes.push_back(size_of(t));
    }
    for (auto t : n.outputs) {
      const auto a = arena.allocate(size_of(t));
      addr[t] = a;
      ins.out_addrs.push_back(a);
      ins.out_sizes.push_back(size_of(t));
    }
    // Free every input whose last reader is this instruction.
    std::vector<std::size_t> dead;
    for (auto t : n.inputs) {
      if (last_use[t] == pos && t != graph.output &&
          std::find(dead.begin(), dead.end(), t) == dead.end()) {
        dead.push_back(t);
      }
    }
    for (auto t : dead) arena.release(addr[t], size_of(t));
    stream.instructions.push_back(std::move(ins));
  }
  stream.memory_elements = arena.high_water();
  return stream;
}

namespace {

using nlohmann::json;

json to_json(const Instruction& ins) {
  json params = {
      {"op", to_string(ins.kind)},
      {"role", to_string(ins.role)},
      {"block", ins.block},
      {"slot", ins.slot},
      {"compressed", ins.compressed},
      {"attention", ins.attention},
      {"flags", {{"bn", ins.flags.bn},
                 {"res", ins.flags.res},
                 {"trp", ins.flags.trp},
                 {"argmax", ins.flags.argmax},
                 {"res_mode", ins.flags.res_mode == ResMode::Add ? "add" : "gate"}}},
      {"dims", {{"in", ins.in_dim}, {"out", ins.out_dim}, {"tokens", ins.tokens}}},
      {"loops", ins.loops},
      {"in_sizes", ins.in_sizes},
      {"out_sizes", ins.out_sizes},
  };
  if (!ins.ranks.empty()) {
    params["n"] = ins.n;
    params["m"] = ins.m;
    params["ranks"] = ins.ranks;
  }
  return {{"seq", ins.seq},
          {"kind", ins.label},
          {"params", params},
          {"in_addrs", ins.in_addrs},
          {"out_addrs", ins.out_addrs}};
}

Instruction from_json(const json& j) {
  Instruction ins;
  ins.seq = j.at("seq").get<std::size_t>();
  ins.label = j.at("kind").get<std::string>();
  const auto& p = j.at("params");
  ins.kind = op_kind_from_string(p.at("op").get<std::string>());
  ins.role = op_role_from_string(p.at("role").get<std::string>());
  ins.block = p.at("block").get<int>();
  ins.slot = p.at("slot").get<std::size_t>();
  ins.compressed = p.at("compressed").get<bool>();
  ins.attention = p.at("attention").get<bool>();
  const auto& f = p.at("flags");
  ins.flags.bn = f.at("bn").get<bool>();
  ins.flags.res = f.at("res").get<bool>();
  ins.flags.trp = f.at("trp").get<bool>();
  ins.flags.argmax = f.at("argmax").get<bool>();
  const auto mode = f.at("res_mode").get<std::string>();
  if (mode != "add" && mode != "gate") throw FormatError("unknown res_mode \"" + mode + "\"");
  ins.flags.res_mode = mode == "add" ? ResMode::Add : ResMode::Gate;
  const auto& d = p.at("dims");
  ins.in_dim = d.at("in").get<std::size_t>();
  ins.out_dim = d.at("out").get<std::size_t>();
  ins.tokens = d.at("tokens").get<std::size_t>();
  ins.loops = p.at("loops").get<std::vector<std::array<std::size_t, 3>>>();
  ins.in_sizes = p.at("in_sizes").get<std::vector<std::uint64_t>>();
  ins.out_sizes = p.at("out_sizes").get<std::vector<std::uint64_t>>();
  if (p.contains("ranks")) {
    ins.n = p.at("n").get<std::vector<std::size_t>>();
    ins.m = p.at("m").get<std::vector<std::size_t>>();
    ins.ranks = p.at("ranks").get<std::vector<std::size_t>>();
  }
  ins.in_addrs = j.at("in_addrs").get<std::vector<std::uint64_t>>();
  ins.out_addrs = j.at("out_addrs").get<std::vector<std::uint64_t>>();
  return ins;
}

}  // namespace

std::string serialize(const InstructionStream& stream) {
  std::string out;
  for (const auto& ins : stream.instructions) {
    out += to_json(ins).dump();
    out += '\n';
  }
  return out;
}

InstructionStream parse_instructions(const std::string& text) {
  InstructionStream s;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      s.instructions.push_back(from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError("instruction line " + std::to_string(line_no) + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw FormatError("instruction line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (const auto& ins : s.instructions) {
    for (std::size_t i = 0; i < ins.out_addrs.size() && i < ins.out_sizes.size(); ++i) {
      s.memory_elements = std::max(s.memory_elements, ins.out_addrs[i] + ins.out_sizes[i]);
    }
    for (std::size_t i = 0; i < ins.in_addrs.size() && i < ins.in_sizes.size(); ++i) {
      s.memory_elements = std::max(s.memory_elements, ins.in_addrs[i] + ins.in_sizes[i]);
    }
  }
  if (!s.instructions.empty() && !s.instructions.front().in_addrs.empty()) {
    s.input_addr = s.instructions.front().in_addrs.front();
  }
  return s;
}

}  // namespace ttd
