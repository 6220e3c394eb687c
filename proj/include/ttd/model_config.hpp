#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace ttd {

enum class Activation { SiLU, GELU };

/// TT layout of one compressed linear: n factors the input, m the output.
struct TTLayerSpec {
  std::vector<std::size_t> n;
  std::vector<std::size_t> m;
  std::size_t rank = 16;  ///< uniform interior rank

  std::vector<std::size_t> ranks() const;  ///< [1, rank, ..., rank, 1]
  std::size_t in_features() const;
  std::size_t out_features() const;
};

/// Reference figures quoted for a preset, kept next to the computed ones.
struct PublishedFigures {
  double cr_o = 0, cr_mlp1 = 0, cr_mlp2 = 0, cr_mlp3 = 0;
  double block_cr = 0;
  double first_token_ms = 0;
  double peak_tokens_per_s = 0;
  double single_block_speedup = 0;
};

struct ModelConfig {
  std::string name;
  std::size_t hidden = 0;
  std::size_t heads = 0;
  std::size_t kv_dim = 0;      ///< width of the K and V projections
  std::size_t mlp_hidden = 0;
  std::size_t vocab = 0;
  std::size_t blocks = 0;
  std::size_t compressed_blocks = 0;  ///< the first blocks in execution order
  Activation act = Activation::SiLU;
  TTLayerSpec tt_o, tt_mlp1, tt_mlp2, tt_mlp3;
  PublishedFigures published;

  std::size_t head_dim() const { return hidden / heads; }
  std::size_t kv_heads() const { return kv_dim / head_dim(); }
  bool block_compressed(std::size_t block) const { return block < compressed_blocks; }

  /// Throws InvalidArgument with the offending field.
  void validate() const;
};

/// Dense over TT parameter count for one block: Q/K/V stay dense, O and the
/// three MLP linears use their TT layouts.
double block_compression_ratio(const ModelConfig& cfg);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// "chatglm3-6b", "llama2-7b" and their "-toy" variants.
std::vector<std::string> preset_names();
ModelConfig model_preset(const std::string& name);

}  // namespace ttd
