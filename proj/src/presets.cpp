#include <stdexcept>

#include "ttd/error.hpp"
#include "ttd/model_config.hpp"
#include "ttd/tensor.hpp"
#include "ttd/tt_compress.hpp"

namespace ttd {

std::vector<std::size_t> TTLayerSpec::ranks() const {
  auto r = uniform_ranks(n.size(), rank);
  return r;
}

std::size_t TTLayerSpec::in_features() const { return product(n); }
std::size_t TTLayerSpec::out_features() const { return product(m); }

namespace {

void check_tt(const TTLayerSpec& s, std::size_t in, std::size_t out, const char* what) {
  if (s.n.size() < 2 || s.n.size() != s.m.size()) {
    throw InvalidArgument(std::string(what) + ": TT layout needs d >= 2 and |n| == |m|");
  }
  if (s.rank == 0) throw InvalidArgument(std::string(what) + ": rank must be positive");
  if (s.in_features() != in || s.out_features() != out) {
    throw InvalidArgument(std::string(what) + ": TT factors give " +
                          std::to_string(s.in_features()) + "x" +
                          std::to_string(s.out_features()) + ", layer is " + std::to_string(in) +
                          "x" + std::to_string(out));
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (hidden == 0 || heads == 0 || kv_dim == 0 || mlp_hidden == 0 || vocab == 0 || blocks == 0) {
    throw InvalidArgument("model " + name + ": dimensions and block count must be positive");
  }
  if (hidden % heads != 0) throw InvalidArgument("hidden must be divisible by heads");
  if (head_dim() % 2 != 0) throw InvalidArgument("head_dim must be even for rotary embedding");
  if (kv_dim % head_dim() != 0 || heads % kv_heads() != 0) {
    throw InvalidArgument("kv_dim must be a whole number of heads dividing the query heads");
  }
  if (compressed_blocks > blocks) throw InvalidArgument("compressed_blocks exceeds blocks");
  check_tt(tt_o, hidden, hidden, "tt_o");
  check_tt(tt_mlp1, hidden, mlp_hidden, "tt_mlp1");
  check_tt(tt_mlp2, hidden, mlp_hidden, "tt_mlp2");
  check_tt(tt_mlp3, mlp_hidden, hidden, "tt_mlp3");
}

double block_compression_ratio(const ModelConfig& cfg) {
  cfg.validate();
  const double q = static_cast<double>(cfg.hidden) * cfg.hidden;
  const double kv = 2.0 * cfg.hidden * cfg.kv_dim;
  double dense = q + kv;
  double compressed = q + kv;
  for (const auto* s : {&cfg.tt_o, &cfg.tt_mlp1, &cfg.tt_mlp2, &cfg.tt_mlp3}) {
    dense += static_cast<double>(s->in_features()) * s->out_features();
    compressed += static_cast<double>(tt_parameter_count(s->n, s->m, s->ranks()));
  }
  return dense / compressed;
}

namespace {

nlohmann::json tt_json(const TTLayerSpec& s) { return {{"n", s.n}, {"m", s.m}, {"rank", s.rank}}; }

TTLayerSpec tt_from(const nlohmann::json& j) {
  TTLayerSpec s;
  s.n = j.at("n").get<std::vector<std::size_t>>();
  s.m = j.at("m").get<std::vector<std::size_t>>();
  s.rank = j.at("rank").get<std::size_t>();
  return s;
}

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  const auto& p = c.published;
  return {
      {"name", c.name},
      {"hidden", c.hidden},
      {"heads", c.heads},
      {"kv_dim", c.kv_dim},
      {"mlp_hidden", c.mlp_hidden},
      {"vocab", c.vocab},
      {"blocks", c.blocks},
      {"compressed_blocks", c.compressed_blocks},
      {"activation", c.act == Activation::SiLU ? "silu" : "gelu"},
      {"tt", {{"o", tt_json(c.tt_o)},
              {"mlp1", tt_json(c.tt_mlp1)},
              {"mlp2", tt_json(c.tt_mlp2)},
              {"mlp3", tt_json(c.tt_mlp3)}}},
      {"published", {{"cr_o", p.cr_o},
                     {"cr_mlp1", p.cr_mlp1},
                     {"cr_mlp2", p.cr_mlp2},
                     {"cr_mlp3", p.cr_mlp3},
                     {"block_cr", p.block_cr},
                     {"first_token_ms", p.first_token_ms},
                     {"peak_tokens_per_s", p.peak_tokens_per_s},
                     {"single_block_speedup", p.single_block_speedup}}},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.name = j.at("name").get<std::string>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.kv_dim = j.at("kv_dim").get<std::size_t>();
    c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
    c.vocab = j.at("vocab").get<std::size_t>();
    c.blocks = j.at("blocks").get<std::size_t>();
    c.compressed_blocks = j.at("compressed_blocks").get<std::size_t>();
    const auto act = j.at("activation").get<std::string>();
    if (act == "silu") {
      c.act = Activation::SiLU;
    } else if (act == "gelu") {
      c.act = Activation::GELU;
    } else {
      throw InvalidArgument("unknown activation \"" + act + "\"");
    }
    const auto& tt = j.at("tt");
    c.tt_o = tt_from(tt.at("o"));
    c.tt_mlp1 = tt_from(tt.at("mlp1"));
    c.tt_mlp2 = tt_from(tt.at("mlp2"));
    c.tt_mlp3 = tt_from(tt.at("mlp3"));
    if (j.contains("published")) {
      const auto& p = j.at("published");
      auto& o = c.published;
      o.cr_o = p.value("cr_o", 0.0);
      o.cr_mlp1 = p.value("cr_mlp1", 0.0);
      o.cr_mlp2 = p.value("cr_mlp2", 0.0);
      o.cr_mlp3 = p.value("cr_mlp3", 0.0);
      o.block_cr = p.value("block_cr", 0.0);
      o.first_token_ms = p.value("first_token_ms", 0.0);
      o.peak_tokens_per_s = p.value("peak_tokens_per_s", 0.0);
      o.single_block_speedup = p.value("single_block_speedup", 0.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::string> preset_names() {
  return {"chatglm3-6b", "chatglm3-6b-toy", "llama2-7b", "llama2-7b-toy"};
}

namespace {

ModelConfig chatglm() {
  ModelConfig c;
  c.name = "chatglm3-6b";
  c.hidden = 4096;
  c.heads = 32;
  c.kv_dim = 256;
  c.mlp_hidden = 13696;
  c.vocab = 65024;
  c.blocks = 28;
  c.compressed_blocks = 15;
  c.act = Activation::GELU;
  c.tt_o = {{16, 8, 8, 4}, {4, 8, 8, 16}, 16};
  c.tt_mlp1 = {{8, 8, 8, 8}, {4, 4, 8, 107}, 16};
  c.tt_mlp2 = c.tt_mlp1;
  c.tt_mlp3 = {{107, 8, 4, 4}, {8, 8, 8, 8}, 16};
  c.published = {481.88, 1446.44, 1446.44, 1446.44, 10.72, 14.34, 69.7, 2.19};
  return c;
}

ModelConfig llama() {
  ModelConfig c;
  c.name = "llama2-7b";
  c.hidden = 4096;
  c.heads = 32;
  c.kv_dim = 4096;
  c.mlp_hidden = 11008;
  c.vocab = 32000;
  c.blocks = 32;
  c.compressed_blocks = 19;
  c.act = Activation::SiLU;
  c.tt_o = {{16, 8, 8, 4}, {4, 8, 8, 16}, 16};
  c.tt_mlp1 = {{16, 8, 8, 4}, {4, 4, 16, 43}, 16};
  c.tt_mlp2 = c.tt_mlp1;
  c.tt_mlp3 = {{43, 16, 4, 4}, {4, 8, 8, 16}, 16};
  c.published = {481.88, 1233.82, 1233.82, 1007.89, 4.01, 15.20, 65.8, 1.78};
  return c;
}

/// Same topology at hidden 64 with one compressed block.
ModelConfig toy(ModelConfig c, std::size_t kv_dim) {
  c.name += "-toy";
  c.hidden = 64;
  c.heads = 4;
  c.kv_dim = kv_dim;
  c.mlp_hidden = 128;
  c.vocab = 96;
  c.blocks = 1;
  c.compressed_blocks = 1;
  c.tt_o = {{4, 4, 4}, {4, 4, 4}, 16};
  c.tt_mlp1 = {{4, 4, 4}, {4, 4, 8}, 16};
  c.tt_mlp2 = c.tt_mlp1;
  c.tt_mlp3 = {{8, 4, 4}, {4, 4, 4}, 16};
  c.published = {};
  return c;
}

}  // namespace

ModelConfig model_preset(const std::string& name) {
  if (name == "chatglm3-6b") return chatglm();
  if (name == "llama2-7b") return llama();
  if (name == "chatglm3-6b-toy") return toy(chatglm(), 32);
  if (name == "llama2-7b-toy") return toy(llama(), 64);
  throw InvalidArgument("unknown model preset \"" + name + "\"");
}

}  // namespace ttd
