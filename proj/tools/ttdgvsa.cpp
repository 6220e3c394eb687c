// ttdgvsa: batch front end for TT compression, inference, simulation,
// compilation and reporting. Every run writes a manifest.json into --out.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ttd/executor.hpp"
#include "ttd/gvsa_sim.hpp"
#include "ttd/instructions.hpp"
#include "ttd/latency.hpp"
#include "ttd/model_config.hpp"
#include "ttd/tensor_io.hpp"
#include "ttd/tt_compress.hpp"
#include "ttd/tt_infer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ttd;

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr double kCrTolerance = 0.01;
constexpr double kLatencyDiscrepancy = 0.01;  ///< relative gap that sets the flag

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string trace;
};

struct UsageError : InvalidArgument {
  using InvalidArgument::InvalidArgument;
};

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

std::vector<std::size_t> parse_dims(const std::string& s, std::size_t count, const char* what) {
  std::vector<std::size_t> v;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      const auto x = std::stoull(item, &used);
      if (used != item.size() || x == 0) throw std::invalid_argument(item);
      v.push_back(static_cast<std::size_t>(x));
    } catch (const std::exception&) {
      throw UsageError(std::string(what) + ": expected positive integers, got \"" + s + "\"");
    }
  }
  if (v.size() != count) throw UsageError(std::string(what) + ": expected " + std::to_string(count) + " values");
  return v;
}

/// Manifest written next to every run's outputs.
class RunManifest {
 public:
  RunManifest(std::string command, const Common& c) : command_(std::move(command)), common_(c) {
    start_ = std::chrono::steady_clock::now();
    if (!c.config.empty()) configs_.push_back(c.config);
  }
  void add_config(const std::string& p) { configs_.push_back(p); }
  void add_output(const fs::path& p) { outputs_.push_back(p.filename().string()); }

  void write(const fs::path& dir) const {
    const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_);
    json j = {{"command", command_},
              {"config_paths", configs_},
              {"seed", common_.seed},
              {"tool_version", kToolVersion},
              {"outputs", outputs_},
              {"wall_clock_ms", ms.count()}};
    write_json(dir / "manifest.json", j);
  }

 private:
  std::string command_;
  Common common_;
  std::vector<std::string> configs_, outputs_;
  std::chrono::steady_clock::time_point start_;
};

struct LayerRef {
  TTConfig tt;
  std::string name;
  double published_cr = 0;
};

/// "<preset>:<o|mlp1|mlp2|mlp3>".
LayerRef layer_from_preset(const std::string& ref) {
  const auto colon = ref.find(':');
  if (colon == std::string::npos) throw UsageError("--layer expects <preset>:<o|mlp1|mlp2|mlp3>");
  const auto cfg = model_preset(ref.substr(0, colon));
  const auto slot = ref.substr(colon + 1);
  const TTLayerSpec* spec = nullptr;
  double pub = 0;
  if (slot == "o") {
    spec = &cfg.tt_o;
    pub = cfg.published.cr_o;
  } else if (slot == "mlp1") {
    spec = &cfg.tt_mlp1;
    pub = cfg.published.cr_mlp1;
  } else if (slot == "mlp2") {
    spec = &cfg.tt_mlp2;
    pub = cfg.published.cr_mlp2;
  } else if (slot == "mlp3") {
    spec = &cfg.tt_mlp3;
    pub = cfg.published.cr_mlp3;
  } else {
    throw UsageError("unknown layer slot \"" + slot + "\"");
  }
  LayerRef l;
  l.tt.n_factors = spec->n;
  l.tt.m_factors = spec->m;
  l.tt.max_rank = spec->rank;
  l.name = ref;
  l.published_cr = pub;
  return l;
}

LayerRef layer_from_json(const std::string& path) {
  const auto j = read_json(path);
  LayerRef l;
  try {
    l.tt.n_factors = j.at("n").get<std::vector<std::size_t>>();
    l.tt.m_factors = j.at("m").get<std::vector<std::size_t>>();
    l.tt.max_rank = j.value("max_rank", std::size_t{16});
    l.tt.epsilon = j.value("epsilon", 0.0);
    if (j.contains("stage_ranks")) l.tt.stage_ranks = j.at("stage_ranks").get<std::vector<std::size_t>>();
    l.name = j.value("name", fs::path(path).stem().string());
    l.published_cr = j.value("published_cr", 0.0);
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  l.tt.validate();
  return l;
}

LayerRef resolve_layer(const Common& c, const std::string& layer) {
  if (!layer.empty() && !c.config.empty()) throw UsageError("use either --layer or --config");
  if (!layer.empty()) return layer_from_preset(layer);
  if (!c.config.empty()) return layer_from_json(c.config);
  throw UsageError("a TT layout is required (--layer or --config)");
}

json cores_json(const TTCores& cores, const std::vector<QuantCore>& q) {
  json scales = json::array(), files = json::array(), qfiles = json::array();
  for (std::size_t k = 0; k < cores.d(); ++k) {
    scales.push_back(static_cast<double>(q[k].scale));
    files.push_back("core_" + std::to_string(k + 1) + ".ttdc");
    qfiles.push_back("qcore_" + std::to_string(k + 1) + ".ttdc");
  }
  return {{"format", "ttd-cores"}, {"version", 1},       {"n", cores.n_factors()},
          {"m", cores.m_factors()}, {"ranks", cores.ranks()}, {"cores", files},
          {"qcores", qfiles},       {"scales", scales}};
}

struct LoadedCores {
  TTCores cores;
  std::vector<QuantCore> quant;
};

LoadedCores load_cores(const fs::path& dir) {
  const auto meta = read_json((dir / "cores.json").string());
  if (meta.value("format", "") != "ttd-cores") throw FormatError(dir.string() + ": not a cores directory");
  std::vector<DenseTensor> cores;
  std::vector<QuantCore> quant;
  const auto files = meta.at("cores").get<std::vector<std::string>>();
  const auto qfiles = meta.at("qcores").get<std::vector<std::string>>();
  const auto scales = meta.at("scales").get<std::vector<double>>();
  if (qfiles.size() != files.size() || scales.size() != files.size()) {
    throw FormatError(dir.string() + ": inconsistent core lists");
  }
  for (std::size_t k = 0; k < files.size(); ++k) {
    cores.push_back(to_dense(read_tensor_file(dir / files[k])));
    quant.push_back({to_int4_tensor(read_tensor_file(dir / qfiles[k])), static_cast<float>(scales[k])});
  }
  return {TTCores(std::move(cores)), std::move(quant)};
}

DenseTensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = normal(rng);
  return DenseTensor(Shape({rows, cols}), std::move(v));
}

// ---------------------------------------------------------------- compress

int cmd_compress(const Common& c, const std::string& layer, const std::string& random_dims,
                 const std::string& weights_path) {
  RunManifest manifest("compress", c);
  auto spec = resolve_layer(c, layer);
  spec.tt.validate();
  const std::size_t M = spec.tt.out_features(), N = spec.tt.in_features();

  DenseTensor w;
  if (!weights_path.empty() && !random_dims.empty()) throw UsageError("use either --weights or --random");
  if (!weights_path.empty()) {
    manifest.add_config(weights_path);
    w = to_dense(read_tensor_file(weights_path));
  } else if (!random_dims.empty()) {
    const auto d = parse_dims(random_dims, 2, "--random");
    w = random_matrix(d[0], d[1], c.seed);
  } else {
    throw UsageError("weights are required (--weights or --random M,N)");
  }
  if (w.rank() != 2 || w.shape()[0] != M || w.shape()[1] != N) {
    throw ShapeError("weight " + w.shape().str() + " does not match TT layout " + std::to_string(M) +
                     "x" + std::to_string(N));
  }
  spdlog::info("compressing {} ({}x{}, max rank {})", spec.name, M, N, spec.tt.max_rank);
  const auto res = tt_svd_detailed(w, spec.tt);
  const auto q = quantize_cores(res.cores);
  const auto err = reconstruction_error(w, res.cores);

  const fs::path out(c.out);
  for (std::size_t k = 0; k < res.cores.d(); ++k) {
    const auto core_path = out / ("core_" + std::to_string(k + 1) + ".ttdc");
    const auto qcore_path = out / ("qcore_" + std::to_string(k + 1) + ".ttdc");
    write_tensor_file(core_path, res.cores.core(k));
    write_tensor_file(qcore_path, q[k].values);
    manifest.add_output(core_path);
    manifest.add_output(qcore_path);
  }
  write_json(out / "cores.json", cores_json(res.cores, q));
  manifest.add_output(out / "cores.json");

  const auto& ranks = res.cores.ranks();
  const double cr = compression_ratio(spec.tt.n_factors, spec.tt.m_factors, ranks);
  json report = {{"kind", "compress"},
                 {"layer", spec.name},
                 {"n", spec.tt.n_factors},
                 {"m", spec.tt.m_factors},
                 {"ranks", ranks},
                 {"dense_params", M * N},
                 {"tt_params", res.cores.parameter_count()},
                 {"cr", cr},
                 {"stage_residuals", res.residuals},
                 {"reconstruction_error", err.value},
                 {"reconstruction_error_absolute", err.absolute}};
  if (spec.published_cr > 0) {
    report["published_cr"] = spec.published_cr;
    report["cr_reconciled"] = std::abs(cr - spec.published_cr) <= kCrTolerance;
  }
  write_json(out / "report.json", report);
  manifest.add_output(out / "report.json");
  manifest.write(out);
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- infer

int cmd_infer(const Common& c, const std::string& cores_dir, const std::string& input_path,
              const std::string& mode) {
  RunManifest manifest("infer", c);
  manifest.add_config(cores_dir);
  const auto loaded = load_cores(cores_dir);
  const auto& cores = loaded.cores;
  const std::size_t N = cores.in_features();

  DenseTensor x;
  if (!input_path.empty()) {
    manifest.add_config(input_path);
    x = to_dense(read_tensor_file(input_path));
  } else {
    x = random_matrix(1, N, c.seed);
  }
  if (x.numel() != N) {
    throw ShapeError("input has " + std::to_string(x.numel()) + " elements, cores expect " + std::to_string(N));
  }
  const DenseTensor xt(Shape(cores.n_factors()), x.values());

  const fs::path out(c.out);
  const auto out_path = out / "output.ttdc";
  if (mode == "naive") {
    write_tensor_file(out_path, ttd_linear_naive(xt, cores));
  } else if (mode == "staged") {
    write_tensor_file(out_path, ttd_linear_staged(xt, cores));
  } else if (mode == "dense-recon") {
    auto y = dense_linear(x.data(), reconstruct(cores));
    write_tensor_file(out_path, DenseTensor(Shape(cores.m_factors()), std::move(y)));
  } else if (mode == "quant") {
    write_tensor_file(out_path, ttd_linear_quant(to_half(xt), loaded.quant));
  } else {
    throw UsageError("unknown --mode \"" + mode + "\" (naive, staged, quant, dense-recon)");
  }
  manifest.add_output(out_path);
  manifest.write(out);
  spdlog::info("wrote {}", out_path.string());
  return 0;
}

// ---------------------------------------------------------------- simulate

json stage_json(const StageReport& s, const PEConfig& pe) {
  const auto& p = s.plan;
  return {{"stage", p.stage},
          {"sum_len", p.sum_len},
          {"out_len", p.out_len},
          {"time_len", p.time_len},
          {"loops", {{"l_time", p.l_time}, {"l_out", p.l_out}, {"l_sum", p.l_sum}}},
          {"tiles", p.tiles()},
          {"cycles", s.cycles},
          {"analytic_cycles", cycles_analytic(p, pe)},
          {"fill_cycles", s.fill_cycles},
          {"reorder_stall_cycles", s.reorder_stall_cycles},
          {"weight_loads", s.weight_loads},
          {"feature_reads", s.feature_reads},
          {"output_writes", s.output_writes},
          {"load_port_stalls", s.load_port_stalls},
          {"weight_residency", {{"min", s.min_residency}, {"max", s.max_residency}}}};
}

json sim_json(const SimReport& r, const std::string& name) {
  const auto& pe = r.config;
  json stages = json::array();
  std::uint64_t analytic = 0;
  for (const auto& s : r.stages) {
    stages.push_back(stage_json(s, pe));
    analytic += cycles_analytic(s.plan, pe);
  }
  const auto t = buffer_traffic(r);
  return {{"kind", "simulate"},
          {"layer", name},
          {"op", r.kind},
          {"pe", {{"t_in", pe.t_in},
                  {"t_out", pe.t_out},
                  {"t_n", pe.t_n},
                  {"frequency_mhz", pe.frequency_mhz},
                  {"double_buffering", pe.double_buffering},
                  {"bank_capacity", pe.bank_capacity}}},
          {"stages", stages},
          {"total_cycles", r.total_cycles},
          {"analytic_cycles", analytic},
          {"reorder_stall_cycles", r.reorder_stall_cycles},
          {"latency_us", r.latency_us},
          {"bank_capacity_required", r.bank_capacity_required},
          {"traffic", {{"input_bytes", t.input_bytes},
                       {"weight_bytes", t.weight_bytes},
                       {"scale_bytes", t.scale_bytes},
                       {"output_bytes", t.output_bytes},
                       {"external_bytes", t.external_bytes},
                       {"internal_bytes", t.internal_bytes}}}};
}

int cmd_simulate(const Common& c, const std::string& layer, const std::string& matmul,
                 std::size_t tokens, const std::string& pe_spec, std::size_t capacity,
                 bool single_buffer) {
  RunManifest manifest("simulate", c);
  PEConfig pe = pe_spec.empty() ? PEConfig{} : PEConfig::parse(pe_spec);
  pe.bank_capacity = capacity;
  pe.double_buffering = !single_buffer;

  std::ofstream trace_file;
  SimOptions opts;
  std::string trace_tmp;
  if (!c.trace.empty()) {
    trace_tmp = c.trace + ".tmp." + std::to_string(::getpid());
    trace_file.open(trace_tmp);
    if (!trace_file) throw InvalidArgument("cannot open trace file " + c.trace);
    opts.trace = [&](const TraceEvent& e) {
      trace_file << json{{"cycle", e.cycle}, {"unit", e.unit}, {"action", e.action}}.dump() << '\n';
    };
  }

  SimReport rep;
  std::string name;
  if (!matmul.empty()) {
    if (!layer.empty() || !c.config.empty()) throw UsageError("--matmul excludes --layer/--config");
    const auto d = parse_dims(matmul, 2, "--matmul");
    rep = run_matmul(d[0], d[1], pe, opts, tokens);
    name = "matmul " + matmul;
  } else {
    const auto spec = resolve_layer(c, layer);
    TTConfig tc = spec.tt;
    // Planned ranks: the layout's uniform rank.
    const auto ranks = uniform_ranks(tc.d(), tc.max_rank);
    rep = run_ttd_linear(pe, tc.n_factors, tc.m_factors, ranks, opts);
    name = spec.name;
  }
  const fs::path out(c.out);
  if (!c.trace.empty()) {
    trace_file.close();
    fs::rename(trace_tmp, c.trace);
  }
  const auto report = sim_json(rep, name);
  write_json(out / "report.json", report);
  manifest.add_output(out / "report.json");
  manifest.write(out);
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- compile

int cmd_compile(const Common& c, const std::string& model, const std::string& latency_path,
                std::size_t tokens, std::size_t kv_len) {
  RunManifest manifest("compile", c);
  if (!model.empty() && !c.config.empty()) throw UsageError("use either --model or --config");
  const ModelConfig cfg = !c.config.empty() ? model_config_from_json(read_json(c.config))
                                            : model_preset(model.empty() ? "chatglm3-6b" : model);
  LatencyTable table;
  if (!latency_path.empty()) {
    manifest.add_config(latency_path);
    table = latency_table_from_json(read_json(latency_path));
  } else {
    table = latency_preset(cfg.name);
  }
  table.validate();

  const auto graph = build_graph(cfg);
  EmitOptions eo;
  eo.tokens = tokens;
  const auto stream = emit_instructions(graph, eo);
  const auto est = estimate_latency(stream.instructions, table, kv_len);

  const fs::path out(c.out);
  write_file_atomic(out / "instructions.jsonl", serialize(stream));
  manifest.add_output(out / "instructions.jsonl");

  json report = {{"kind", "compile"},
                 {"model", cfg.name},
                 {"blocks", cfg.blocks},
                 {"compressed_blocks", cfg.compressed_blocks},
                 {"instructions", stream.instructions.size()},
                 {"memory_elements", stream.memory_elements},
                 {"block_sum_us", table.block_sum_us()},
                 {"baseline_block_us", table.block_sum_us() * table.single_block_speedup},
                 {"output_us", table.output_sum_us()},
                 {"first_token_ms", est.first_token_ms},
                 {"decode_step_ms", est.decode_step_ms},
                 {"tokens_per_s", est.tokens_per_s},
                 {"kv_len", kv_len},
                 {"block_cr", block_compression_ratio(cfg)}};
  const auto& pub = cfg.published;
  if (pub.first_token_ms > 0) {
    const double gap = (est.first_token_ms - pub.first_token_ms) / pub.first_token_ms;
    report["published_first_token_ms"] = pub.first_token_ms;
    report["published_peak_tokens_per_s"] = pub.peak_tokens_per_s;
    report["published_block_cr"] = pub.block_cr;
    report["first_token_relative_gap"] = gap;
    report["discrepancy"] = std::abs(gap) > kLatencyDiscrepancy;
  }
  write_json(out / "report.json", report);
  manifest.add_output(out / "report.json");
  manifest.write(out);
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- report

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{
      "run",           "command",        "seed",          "layer",
      "cr",            "published_cr",   "cr_reconciled", "reconstruction_error",
      "total_cycles",  "latency_us",     "first_token_ms", "published_first_token_ms",
      "discrepancy"};
  return cols;
}

std::string cell(const json& v) {
  if (v.is_null()) return "-";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "yes" : "no";
  if (v.is_number_float()) {
    std::ostringstream os;
    os.precision(6);
    os << v.get<double>();
    return os.str();
  }
  return v.dump();
}

int cmd_report(const Common& c, const std::vector<std::string>& dirs, const std::string& format) {
  if (format != "text" && format != "json") throw UsageError("--format must be text or json");
  std::vector<json> rows;
  for (const auto& d : dirs) {
    const fs::path dir(d);
    if (!fs::exists(dir / "manifest.json")) {
      spdlog::warn("skipping {}: no manifest.json", d);
      continue;
    }
    const auto man = read_json((dir / "manifest.json").string());
    json rep = fs::exists(dir / "report.json") ? read_json((dir / "report.json").string()) : json::object();
    json row = json::object();
    for (const auto& col : report_columns()) row[col] = nullptr;
    row["run"] = dir.lexically_normal().string();
    row["command"] = man.value("command", "");
    row["seed"] = man.value("seed", 0);
    for (const auto* k : {"layer", "cr", "published_cr", "cr_reconciled", "reconstruction_error", "total_cycles",
                          "latency_us", "first_token_ms", "published_first_token_ms", "discrepancy"}) {
      if (rep.contains(k)) row[k] = rep[k];
    }
    if (rep.contains("model")) row["layer"] = rep["model"];
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(), [](const json& a, const json& b) {
    return std::tie(a["command"].get_ref<const std::string&>(), a["run"].get_ref<const std::string&>()) <
           std::tie(b["command"].get_ref<const std::string&>(), b["run"].get_ref<const std::string&>());
  });

  std::string text;
  if (format == "json") {
    text = json{{"columns", report_columns()}, {"rows", rows}}.dump(2) + "\n";
  } else {
    std::vector<std::vector<std::string>> grid{report_columns()};
    for (const auto& r : rows) {
      std::vector<std::string> line;
      for (const auto& col : report_columns()) line.push_back(cell(r[col]));
      grid.push_back(std::move(line));
    }
    std::vector<std::size_t> width(report_columns().size(), 0);
    for (const auto& line : grid) {
      for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
    }
    std::ostringstream os;
    for (const auto& line : grid) {
      for (std::size_t i = 0; i < line.size(); ++i) {
        os << line[i];
        if (i + 1 < line.size()) os << std::string(width[i] - line[i].size() + 2, ' ');
      }
      os << '\n';
    }
    text = os.str();
  }
  if (!c.out.empty() && c.out != "-") {
    write_file_atomic(c.out, text);
  }
  std::cout << text;
  return 0;
}

// ---------------------------------------------------------------- main

int fail(const std::string& type, const std::string& msg, int code, json extra = json::object()) {
  json j = {{"error", type}, {"message", msg}, {"exit_code", code}};
  j.update(extra);
  std::cerr << j.dump() << "\n";
  return code;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("ttdgvsa");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("TTD_LOG")) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"TT-compressed linear layers: compression, inference, GVSA simulation, compilation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common common;
  auto add_common = [&](CLI::App* sub, bool with_config = true) {
    if (with_config) sub->add_option("--config", common.config, "JSON config file");
    sub->add_option("--seed", common.seed, "RNG seed");
    sub->add_option("--out", common.out, "output directory");
  };

  std::string layer, random_dims, weights, cores_dir, input, mode = "staged", matmul, pe, model, latency,
      format = "text";
  std::size_t tokens = 1, kv_len = 1, capacity = 0;
  bool single_buffer = false;
  std::vector<std::string> dirs;

  auto* compress = app.add_subcommand("compress", "TT-SVD a weight matrix and write cores");
  add_common(compress);
  compress->add_option("--layer", layer, "preset layer, e.g. chatglm3-6b:o");
  compress->add_option("--random", random_dims, "random Gaussian weight M,N");
  compress->add_option("--weights", weights, "weight matrix container (M x N)");

  auto* infer = app.add_subcommand("infer", "run a TT layer on an input vector");
  add_common(infer, false);
  infer->add_option("--cores", cores_dir, "directory written by compress")->required();
  infer->add_option("--input", input, "input container; random when omitted");
  infer->add_option("--mode", mode, "naive | staged | quant | dense-recon");

  auto* simulate = app.add_subcommand("simulate", "cycle-level GVSA run of a TT layer or matmul");
  add_common(simulate);
  simulate->add_option("--layer", layer, "preset layer, e.g. llama2-7b:mlp3");
  simulate->add_option("--matmul", matmul, "dense M,N");
  simulate->add_option("--tokens", tokens, "input vectors for --matmul");
  simulate->add_option("--pe", pe, "Tin,Tout,Tn,MHz");
  simulate->add_option("--bank-capacity", capacity, "elements per ping-pong bank (0 = unbounded)");
  simulate->add_flag("--single-buffer", single_buffer, "one bank with explicit reorder passes");
  simulate->add_option("--trace", common.trace, "per-cycle event log (JSON lines)");

  auto* compile = app.add_subcommand("compile", "emit instructions and estimate latency");
  add_common(compile);
  compile->add_option("--model", model, "preset name");
  compile->add_option("--latency", latency, "latency table JSON");
  compile->add_option("--tokens", tokens, "prompt tokens for address sizing");
  compile->add_option("--kv-len", kv_len, "attended length for the decode-step estimate");

  auto* report = app.add_subcommand("report", "merge run directories into one table");
  report->add_option("dirs", dirs, "run directories")->required();
  report->add_option("--format", format, "text | json");
  report->add_option("--out", common.out, "output file ('-' for stdout only)");

  try {
    common.out = "out";
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*compress) return cmd_compress(common, layer, random_dims, weights);
    if (*infer) return cmd_infer(common, cores_dir, input, mode);
    if (*simulate) return cmd_simulate(common, layer, matmul, tokens, pe, capacity, single_buffer);
    if (*compile) return cmd_compile(common, model, latency, tokens, kv_len);
    if (*report) {
      if (report->count("--out") == 0) common.out = "-";
      return cmd_report(common, dirs, format);
    }
  } catch (const CapacityError& e) {
    return fail("capacity", e.what(), 4, {{"required", e.required()}, {"available", e.available()}});
  } catch (const UsageError& e) {
    return fail("usage", e.what(), 2);
  } catch (const ShapeError& e) {
    return fail("shape", e.what(), 2);
  } catch (const InvalidArgument& e) {
    return fail("invalid_argument", e.what(), 2);
  } catch (const IndexError& e) {
    return fail("index", e.what(), 2);
  } catch (const FormatError& e) {
    return fail("format", e.what(), 2);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), 3);
  } catch (const DomainError& e) {
    return fail("numeric", e.what(), 3);
  } catch (const OverflowError& e) {
    return fail("numeric", e.what(), 3);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 2;
}
