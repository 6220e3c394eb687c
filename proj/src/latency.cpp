#include "ttd/latency.hpp"

namespace ttd {

namespace {

bool is_tt_row(const std::string& op) { return op.rfind("TTD", 0) == 0; }

}  // namespace

void LatencyTable::validate() const {
  if (block.empty() && output.empty()) throw InvalidArgument("latency table is empty");
  for (const auto* rows : {&block, &output}) {
    for (const auto& e : *rows) {
      if (!(e.us > 0.0)) throw InvalidArgument("latency entry " + e.op + " must be positive");
    }
  }
  if (!(single_block_speedup > 0.0)) throw InvalidArgument("single_block_speedup must be positive");
  if (!(baseline_tt_scale() > 0.0)) {
    throw InvalidArgument("speedup leaves no time for the dense replacements of TT ops");
  }
}

double LatencyTable::block_sum_us() const {
  double s = 0;
  for (const auto& e : block) s += e.us;
  return s;
}

double LatencyTable::output_sum_us() const {
  double s = 0;
  for (const auto& e : output) s += e.us;
  return s;
}

double LatencyTable::baseline_tt_scale() const {
  double tt = 0;
  for (const auto& e : block) {
    if (is_tt_row(e.op)) tt += e.us;
  }
  if (tt == 0.0) return 1.0;
  return (single_block_speedup * block_sum_us() - (block_sum_us() - tt)) / tt;
}

nlohmann::json to_json(const LatencyTable& t) {
  auto rows = [](const std::vector<LatencyEntry>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : v) a.push_back({{"op", e.op}, {"us", e.us}});
    return a;
  };
  return {{"model", t.model},
          {"single_block_speedup", t.single_block_speedup},
          {"block", rows(t.block)},
          {"output", rows(t.output)}};
}

LatencyTable latency_table_from_json(const nlohmann::json& j) {
  LatencyTable t;
  try {
    t.model = j.at("model").get<std::string>();
    t.single_block_speedup = j.at("single_block_speedup").get<double>();
    for (const auto& r : j.at("block")) t.block.push_back({r.at("op"), r.at("us")});
    for (const auto& r : j.at("output")) t.output.push_back({r.at("op"), r.at("us")});
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("latency table: ") + e.what());
  }
  t.validate();
  return t;
}

LatencyTable latency_preset(const std::string& model_name) {
  std::string base = model_name;
  if (base.size() > 4 && base.compare(base.size() - 4, 4, "-toy") == 0) {
    base.resize(base.size() - 4);
  }
  LatencyTable t;
  t.model = base;
  if (base == "chatglm3-6b") {
    t.single_block_speedup = 2.19;
    t.block = {{"LN", 11.39},           {"Linear-BN(QK)", 51.03},   {"EMB(Q)", 6.54},
               {"EMB(K)", 6.80},        {"Linear-TRP", 8.24},       {"Softmax", 26.08},
               {"Linear-BN(V)", 7.47},  {"Linear", 8.99},           {"TTDLinear-BNRes", 29.32},
               {"LN", 11.63},           {"TTDLinear-BN", 43.04},    {"ACT", 21.87},
               {"TTDLinear-BNRes", 43.49}, {"TTDLinear-BNRes", 37.22}};
    t.output = {{"LN", 13.78}, {"Linear-BNArgmax", 701.18}};
  } else if (base == "llama2-7b") {
    t.single_block_speedup = 1.78;
    t.block = {{"LN", 12.57},           {"Linear-BN(QK)", 91.23},   {"EMB(Q)", 4.82},
               {"EMB(K)", 6.80},        {"Linear-TRP", 47.35},      {"Softmax", 22.35},
               {"Linear-BN(V)", 51.94}, {"Linear", 44.13},          {"TTDLinear-BNRes", 29.34},
               {"LN", 11.00},           {"TTDLinear-BN", 27.03},    {"ACT", 12.43},
               {"TTDLinear-BNRes", 27.74}, {"TTDLinear-BNRes", 24.73}};
    t.output = {{"LN", 12.28}, {"Linear-BNArgmax", 349.16}};
  } else {
    throw InvalidArgument("no latency table for model \"" + model_name + "\"");
  }
  return t;
}

double instruction_delay_us(const Instruction& ins, const LatencyTable& table,
                            std::size_t kv_len) {
  const auto& rows = ins.block >= 0 ? table.block : table.output;
  const std::string where = ins.block >= 0 ? "block slot " : "output slot ";
  if (ins.slot >= rows.size()) {
    throw InvalidArgument("no latency entry for op " + ins.label + " (" + where +
                          std::to_string(ins.slot) + ")");
  }
  const auto& e = rows[ins.slot];
  double us = e.us;
  std::string expected = e.op;
  if (ins.block >= 0 && !ins.compressed && is_tt_row(e.op)) {
    expected = e.op.substr(3);
    us *= table.baseline_tt_scale();
  }
  if (expected != ins.label) {
    throw InvalidArgument("no latency entry for op " + ins.label + " (" + where +
                          std::to_string(ins.slot) + " holds " + e.op + ")");
  }
  if (ins.attention) us *= static_cast<double>(kv_len);
  return us;
}

LatencyEstimate estimate_latency(std::span<const Instruction> stream, const LatencyTable& table,
                                 std::size_t kv_len) {
  if (kv_len == 0) throw InvalidArgument("kv_len must be positive");
  LatencyEstimate est;
  double first_us = 0, step_us = 0;
  for (const auto& ins : stream) {
    first_us += instruction_delay_us(ins, table, 1);
    step_us += instruction_delay_us(ins, table, kv_len);
  }
  est.first_token_ms = first_us / 1000.0;
  est.decode_step_ms = step_us / 1000.0;
  est.tokens_per_s = step_us > 0 ? 1e6 / step_us : 0.0;
  return est;
}

}  // namespace ttd
