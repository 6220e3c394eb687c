#include "ttd/executor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "ttd/fp16.hpp"
#include "ttd/tt_infer.hpp"

namespace ttd {

namespace {

constexpr std::size_t kDeskMaxHidden = 64;
constexpr std::size_t kDeskMaxBlocks = 2;

void require_desk_scale(const ModelConfig& cfg) {
  if (cfg.hidden > kDeskMaxHidden || cfg.blocks > kDeskMaxBlocks) {
    throw InvalidArgument("functional execution is limited to hidden <= 64 and blocks <= 2; " +
                          cfg.name + " has hidden " + std::to_string(cfg.hidden) + " and " +
                          std::to_string(cfg.blocks) + " blocks");
  }
}

struct SlotShape {
  std::string key;
  std::size_t in, out;
  const TTLayerSpec* tt;
};

std::vector<SlotShape> linear_slots(const ModelConfig& c, std::size_t blk) {
  const std::string p = "b" + std::to_string(blk) + ".";
  return {{p + "qk", c.hidden, c.hidden + c.kv_dim, nullptr},
          {p + "v", c.hidden, c.kv_dim, nullptr},
          {p + "o", c.hidden, c.hidden, &c.tt_o},
          {p + "mlp1", c.hidden, c.mlp_hidden, &c.tt_mlp1},
          {p + "mlp2", c.hidden, c.mlp_hidden, &c.tt_mlp2},
          {p + "mlp3", c.mlp_hidden, c.hidden, &c.tt_mlp3}};
}

}  // namespace

double gelu(double x) {
  const double k = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

std::vector<double> rms_norm(const std::vector<double>& x, std::size_t width,
                             const std::vector<double>& gain) {
  if (width == 0 || x.size() % width != 0 || gain.size() != width) {
    throw ShapeError("rms_norm: input of " + std::to_string(x.size()) + " values, width " +
                     std::to_string(width) + ", gain " + std::to_string(gain.size()));
  }
  std::vector<double> y(x.size());
  for (std::size_t r = 0; r < x.size() / width; ++r) {
    double ss = 0;
    for (std::size_t c = 0; c < width; ++c) ss += x[r * width + c] * x[r * width + c];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(width) + kNormEpsilon);
    for (std::size_t c = 0; c < width; ++c) y[r * width + c] = x[r * width + c] * inv * gain[c];
  }
  return y;
}

void softmax_causal_inplace(std::vector<double>& s, std::size_t heads, std::size_t tokens) {
  if (s.size() != heads * tokens * tokens) throw ShapeError("softmax: score block size mismatch");
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t t = 0; t < tokens; ++t) {
      double* row = s.data() + (h * tokens + t) * tokens;
      const double peak = *std::max_element(row, row + t + 1);
      double sum = 0;
      for (std::size_t u = 0; u <= t; ++u) {
        row[u] = std::exp(row[u] - peak);
        sum += row[u];
      }
      for (std::size_t u = 0; u <= t; ++u) row[u] /= sum;
      for (std::size_t u = t + 1; u < tokens; ++u) row[u] = 0.0;
    }
  }
}

ModelWeights random_weights(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  require_desk_scale(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](std::size_t count, double mean, double sd) {
    std::vector<double> v(count);
    for (auto& x : v) x = mean + sd * normal(rng);
    return v;
  };

  ModelWeights w;
  w.embedding = DenseTensor(Shape({cfg.vocab, cfg.hidden}), fill(cfg.vocab * cfg.hidden, 0, 1));
  for (std::size_t blk = 0; blk < cfg.blocks; ++blk) {
    const std::string p = "b" + std::to_string(blk) + ".";
    w.norms[p + "ln1"] = fill(cfg.hidden, 1.0, 0.1);
    w.norms[p + "ln2"] = fill(cfg.hidden, 1.0, 0.1);
    for (const auto& s : linear_slots(cfg, blk)) {
      LinearWeights lw;
      lw.dense = DenseTensor(Shape({s.out, s.in}),
                             fill(s.out * s.in, 0.0, 1.0 / std::sqrt(static_cast<double>(s.in))));
      lw.bn_scale = fill(s.out, 1.0, 0.05);
      lw.bn_bias = fill(s.out, 0.0, 0.02);
      w.linears[s.key] = std::move(lw);
    }
  }
  w.norms["final.ln"] = fill(cfg.hidden, 1.0, 0.1);
  LinearWeights head;
  head.dense = DenseTensor(Shape({cfg.vocab, cfg.hidden}),
                           fill(cfg.vocab * cfg.hidden, 0.0,
                                1.0 / std::sqrt(static_cast<double>(cfg.hidden))));
  head.bn_scale = fill(cfg.vocab, 1.0, 0.05);
  head.bn_bias = fill(cfg.vocab, 0.0, 0.02);
  w.linears["lm_head"] = std::move(head);
  return w;
}

void compress_weights(ModelWeights& weights, const ModelConfig& cfg,
                      std::optional<std::size_t> max_rank) {
  for (std::size_t blk = 0; blk < cfg.compressed_blocks; ++blk) {
    for (const auto& s : linear_slots(cfg, blk)) {
      if (!s.tt) continue;
      auto it = weights.linears.find(s.key);
      if (it == weights.linears.end()) throw InvalidArgument("missing weights for " + s.key);
      TTConfig tc;
      tc.n_factors = s.tt->n;
      tc.m_factors = s.tt->m;
      tc.max_rank = max_rank.value_or(s.tt->rank);
      it->second.tt = tt_svd(it->second.dense, tc);
      it->second.quant = quantize_cores(*it->second.tt);
    }
  }
}

namespace {

class Runner {
 public:
  Runner(const OperatorGraph& g, const ModelWeights& w, std::size_t tokens, ExecMode mode)
      : g_(g), w_(w), cfg_(g.config), t_(tokens), mode_(mode) {}

  void set(std::size_t id, std::vector<double> v) { values_[id] = std::move(v); }
  const std::vector<double>& get(std::size_t id) const {
    auto it = values_.find(id);
    if (it == values_.end()) throw GraphError("tensor " + g_.tensors.at(id).name + " not computed");
    return it->second;
  }

  void run(const OpNode& n);
  ExecResult result;

 private:
  const LinearWeights& lin(const std::string& key) const {
    auto it = w_.linears.find(key);
    if (it == w_.linears.end()) throw InvalidArgument("missing weights for " + key);
    return it->second;
  }

  std::vector<double> apply_linear(const OpNode& n, const std::vector<double>& x) const;
  void apply_bn(const LinearWeights& lw, std::vector<double>& y) const;
  static void apply_res(std::vector<double>& y, const std::vector<double>& r, ResMode mode);
  std::vector<double> scores(const std::vector<double>& q, const std::vector<double>& k,
                             bool k_transposed) const;
  std::vector<double> context(const std::vector<double>& p, const std::vector<double>& v) const;
  std::vector<double> rope(const std::vector<double>& qk, bool keys) const;
  std::vector<double> argmax(const std::vector<double>& logits);

  const OperatorGraph& g_;
  const ModelWeights& w_;
  const ModelConfig& cfg_;
  std::size_t t_;
  ExecMode mode_;
  std::map<std::size_t, std::vector<double>> values_;
};

std::vector<double> Runner::apply_linear(const OpNode& n, const std::vector<double>& x) const {
  const auto& lw = lin(n.weight);
  const std::size_t in = n.in_dim, out = n.out_dim;
  if (x.size() != t_ * in) throw ShapeError(n.label() + ": input width mismatch");
  std::vector<double> y(t_ * out);
  for (std::size_t r = 0; r < t_; ++r) {
    std::span<const double> row(x.data() + r * in, in);
    std::vector<double> res;
    if (n.kind == OpKind::TTDLinear && mode_ == ExecMode::TT) {
      if (!lw.tt) throw InvalidArgument(n.weight + " has no TT cores");
      DenseTensor xt(Shape(n.tt->n), std::vector<double>(row.begin(), row.end()));
      res = ttd_linear_staged(xt, *lw.tt).values();
    } else if (n.kind == OpKind::TTDLinear && mode_ == ExecMode::Quant) {
      if (lw.quant.empty()) throw InvalidArgument(n.weight + " has no INT4 cores");
      DenseTensor xt(Shape(n.tt->n), std::vector<double>(row.begin(), row.end()));
      res = from_half(ttd_linear_quant(to_half(xt), lw.quant)).values();
    } else {
      res = dense_linear(row, lw.dense);
    }
    std::copy(res.begin(), res.end(), y.begin() + static_cast<std::ptrdiff_t>(r * out));
  }
  return y;
}

void Runner::apply_bn(const LinearWeights& lw, std::vector<double>& y) const {
  const std::size_t out = lw.bn_scale.size();
  if (out == 0 || y.size() % out != 0) throw ShapeError("BN width mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] * lw.bn_scale[i % out] + lw.bn_bias[i % out];
}

void Runner::apply_res(std::vector<double>& y, const std::vector<double>& r, ResMode mode) {
  if (y.size() != r.size()) throw ShapeError("Res operand size mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = mode == ResMode::Add ? y[i] + r[i] : y[i] * r[i];
}

std::vector<double> Runner::rope(const std::vector<double>& qk, bool keys) const {
  const std::size_t width = cfg_.hidden + cfg_.kv_dim;
  const std::size_t off = keys ? cfg_.hidden : 0;
  const std::size_t len = keys ? cfg_.kv_dim : cfg_.hidden;
  const std::size_t hd = cfg_.head_dim();
  std::vector<double> out(t_ * len);
  for (std::size_t t = 0; t < t_; ++t) {
    for (std::size_t c = 0; c < len; c += 2) {
      const std::size_t i = (c % hd) / 2;
      const double theta = static_cast<double>(t) *
                           std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
      const double a = qk[t * width + off + c], b = qk[t * width + off + c + 1];
      out[t * len + c] = a * std::cos(theta) - b * std::sin(theta);
      out[t * len + c + 1] = a * std::sin(theta) + b * std::cos(theta);
    }
  }
  return out;
}

std::vector<double> Runner::scores(const std::vector<double>& q, const std::vector<double>& k,
                                   bool k_transposed) const {
  const std::size_t hd = cfg_.head_dim(), heads = cfg_.heads, kv = cfg_.kv_dim;
  const std::size_t group = heads / cfg_.kv_heads();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> s(heads * t_ * t_);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t kh = h / group;
    for (std::size_t t = 0; t < t_; ++t) {
      for (std::size_t u = 0; u < t_; ++u) {
        double acc = 0;
        for (std::size_t e = 0; e < hd; ++e) {
          const std::size_t kc = kh * hd + e;
          const double kval = k_transposed ? k[kc * t_ + u] : k[u * kv + kc];
          acc += q[t * cfg_.hidden + h * hd + e] * kval;
        }
        s[(h * t_ + t) * t_ + u] = acc * scale;
      }
    }
  }
  return s;
}

std::vector<double> Runner::context(const std::vector<double>& p, const std::vector<double>& v) const {
  const std::size_t hd = cfg_.head_dim(), heads = cfg_.heads, kv = cfg_.kv_dim;
  const std::size_t group = heads / cfg_.kv_heads();
  std::vector<double> ctx(t_ * cfg_.hidden, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t kh = h / group;
    for (std::size_t t = 0; t < t_; ++t) {
      for (std::size_t e = 0; e < hd; ++e) {
        double acc = 0;
        for (std::size_t u = 0; u < t_; ++u) acc += p[(h * t_ + t) * t_ + u] * v[u * kv + kh * hd + e];
        ctx[t * cfg_.hidden + h * hd + e] = acc;
      }
    }
  }
  return ctx;
}

std::vector<double> Runner::argmax(const std::vector<double>& logits) {
  const std::size_t vocab = cfg_.vocab;
  result.logits = logits;
  result.token_ids.assign(t_, 0);
  std::vector<double> ids(t_);
  for (std::size_t t = 0; t < t_; ++t) {
    const auto* row = logits.data() + t * vocab;
    result.token_ids[t] = static_cast<std::size_t>(std::max_element(row, row + vocab) - row);
    ids[t] = static_cast<double>(result.token_ids[t]);
  }
  return ids;
}

void Runner::run(const OpNode& n) {
  std::vector<double> y;
  switch (n.kind) {
    case OpKind::LN: {
      auto it = w_.norms.find(n.weight);
      if (it == w_.norms.end()) throw InvalidArgument("missing norm gain " + n.weight);
      y = rms_norm(get(n.inputs[0]), cfg_.hidden, it->second);
      break;
    }
    case OpKind::EMB:
      y = rope(get(n.inputs[0]), n.role == OpRole::RopeK);
      break;
    case OpKind::ACT:
      y = get(n.inputs[0]);
      for (auto& v : y) v = cfg_.act == Activation::SiLU ? silu(v) : gelu(v);
      break;
    case OpKind::Softmax:
      y = get(n.inputs[0]);
      softmax_causal_inplace(y, cfg_.heads, t_);
      break;
    case OpKind::TRP: {
      const auto& k = get(n.inputs[0]);
      const std::size_t w = g_.tensors.at(n.inputs[0]).width;
      y.resize(k.size());
      for (std::size_t t = 0; t < t_; ++t) {
        for (std::size_t c = 0; c < w; ++c) y[c * t_ + t] = k[t * w + c];
      }
      break;
    }
    case OpKind::BN:
      y = get(n.inputs[0]);
      apply_bn(lin(n.weight), y);
      break;
    case OpKind::Res:
      y = get(n.inputs[0]);
      apply_res(y, get(n.inputs[1]), n.flags.res_mode);
      break;
    case OpKind::Argmax:
      y = argmax(get(n.inputs[0]));
      break;
    case OpKind::Linear:
    case OpKind::TTDLinear:
      if (n.role == OpRole::Scores) {
        y = scores(get(n.inputs[0]), get(n.inputs[1]), !n.flags.trp);
      } else if (n.role == OpRole::Context) {
        y = context(get(n.inputs[0]), get(n.inputs[1]));
      } else {
        y = apply_linear(n, get(n.inputs[0]));
        if (n.flags.bn) apply_bn(lin(n.weight), y);
        if (n.flags.res) apply_res(y, get(n.inputs.back()), n.flags.res_mode);
        if (n.flags.argmax) y = argmax(y);
      }
      break;
  }
  set(n.outputs.at(0), std::move(y));
}

}  // namespace

ExecResult functional_execute(const OperatorGraph& graph, const ModelWeights& weights,
                              const std::vector<std::size_t>& tokens, ExecMode mode) {
  const auto& cfg = graph.config;
  require_desk_scale(cfg);
  if (tokens.empty()) throw InvalidArgument("functional_execute needs at least one token");
  if (weights.embedding.rank() != 2 || weights.embedding.shape()[0] != cfg.vocab ||
      weights.embedding.shape()[1] != cfg.hidden) {
    throw ShapeError("embedding table shape " + weights.embedding.shape().str() +
                     " does not match the model");
  }
  Runner runner(graph, weights, tokens.size(), mode);
  std::vector<double> x(tokens.size() * cfg.hidden);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= cfg.vocab) throw IndexError("token id out of vocabulary");
    for (std::size_t c = 0; c < cfg.hidden; ++c) {
      x[t * cfg.hidden + c] = weights.embedding[tokens[t] * cfg.hidden + c];
    }
  }
  runner.set(graph.input, std::move(x));
  for (auto i : topological_order(graph)) runner.run(graph.nodes[i]);
  runner.result.tokens = tokens.size();
  if (runner.result.token_ids.empty()) {
    // Graph without an argmax stage: the output tensor holds the logits.
    runner.result.logits = runner.get(graph.output);
  }
  return std::move(runner.result);
}

}  // namespace ttd
