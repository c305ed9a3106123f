#include "mile/model.hpp"

#include <cmath>

#include "mile/error.hpp"
#include "mile/ops.hpp"
#include "mile/rng.hpp"

namespace mile {

std::string_view to_string(Activation a) noexcept {
  return a == Activation::kSiLU ? "silu" : "gelu";
}

Activation parse_activation(std::string_view name) {
  if (name == "silu") return Activation::kSiLU;
  if (name == "gelu") return Activation::kGELU;
  throw ConfigError("unknown activation '" + std::string(name) + "' (expected silu or gelu)");
}

std::size_t ModelConfig::hidden_dim() const noexcept {
  if (ffn_hidden != 0) return ffn_hidden;
  const std::size_t raw = (8 * dim + 2) / 3;
  return (raw + 7) / 8 * 8;
}

void ModelConfig::validate() const {
  if (dim == 0 || n_heads == 0 || n_layers == 0 || vocab_size == 0 || seq_len == 0) {
    throw ConfigError("model: dim, n_heads, n_layers, vocab_size and seq_len must be positive");
  }
  if (dim % n_heads != 0) {
    throw ConfigError("model: dim " + std::to_string(dim) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (rotary && head_dim() % 2 != 0) throw ConfigError("model: rotary embedding needs an even head dimension");
  if (!(norm_eps > 0.0)) throw ConfigError("model: norm_eps must be positive");
}

ModelConfig ModelConfig::preset(std::string_view name) {
  ModelConfig c;
  if (name == "tiny" || name == "desk") {
    c.dim = 64;
    c.n_layers = 2;
    c.n_heads = 2;
    c.vocab_size = 512;
    c.seq_len = 128;
  } else if (name == "small") {
    c.dim = 128;
    c.n_layers = 4;
    c.n_heads = 4;
    c.vocab_size = 2048;
    c.seq_len = 256;
  } else {
    throw ConfigError("unknown model preset '" + std::string(name) + "'");
  }
  return c;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_embedding", tok_embedding);
  if (pos_embedding.defined()) out.emplace_back("pos_embedding", pos_embedding);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    const LayerParams& l = layers[i];
    out.emplace_back(p + "attn_norm", l.attn_norm);
    out.emplace_back(p + "wq", l.wq);
    out.emplace_back(p + "wk", l.wk);
    out.emplace_back(p + "wv", l.wv);
    out.emplace_back(p + "wo", l.wo);
    out.emplace_back(p + "ffn_norm", l.ffn_norm);
    out.emplace_back(p + "w_gate", l.w_gate);
    out.emplace_back(p + "w_up", l.w_up);
    out.emplace_back(p + "w_down", l.w_down);
  }
  out.emplace_back("final_norm", final_norm);
  if (!config.tie_embeddings) out.emplace_back("output", output);
  return out;
}

std::vector<Tensor> ModelParams::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void ModelParams::zero_grad() {
  for (Tensor& t : parameters()) t.zero_grad();
}

ModelParams ModelParams::clone() const {
  auto copy = [](const Tensor& t) {
    if (!t.defined()) return Tensor();
    Tensor c = t.clone();
    c.set_requires_grad(t.requires_grad());
    return c;
  };
  ModelParams p;
  p.config = config;
  p.tok_embedding = copy(tok_embedding);
  p.pos_embedding = copy(pos_embedding);
  for (const LayerParams& l : layers) {
    p.layers.push_back(LayerParams{copy(l.attn_norm), copy(l.wq), copy(l.wk), copy(l.wv), copy(l.wo),
                                   copy(l.ffn_norm), copy(l.w_gate), copy(l.w_up), copy(l.w_down)});
  }
  p.final_norm = copy(final_norm);
  p.output = config.tie_embeddings ? p.tok_embedding : copy(output);
  return p;
}

ParamCount count_params(const ModelConfig& c) {
  ParamCount n;
  const std::size_t hidden = c.hidden_dim();
  n.embedding = c.vocab_size * c.dim;
  n.positional = c.rotary ? 0 : c.seq_len * c.dim;
  n.per_layer = 2 * c.dim + 4 * c.dim * c.dim + 3 * c.dim * hidden;
  n.layers = c.n_layers * n.per_layer;
  n.final_norm = c.dim;
  n.output = c.tie_embeddings ? 0 : c.vocab_size * c.dim;
  n.total = n.embedding + n.positional + n.layers + n.final_norm + n.output;
  return n;
}

ModelParams init_model(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.dim, h = config.hidden_dim(), N = config.vocab_size;
  Rng rng = Rng::stream(config.seed, "init");
  const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
  auto matrix = [&](std::size_t rows, std::size_t cols) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = rng.normal(0.0, stddev);
    return Tensor({rows, cols}, std::move(v), true);
  };
  auto gain = [&] { return Tensor::full({d}, 1.0, true); };

  ModelParams p;
  p.config = config;
  p.tok_embedding = matrix(N, d);
  if (!config.rotary) p.pos_embedding = matrix(config.seq_len, d);
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    LayerParams l;
    l.attn_norm = gain();
    l.wq = matrix(d, d);
    l.wk = matrix(d, d);
    l.wv = matrix(d, d);
    l.wo = matrix(d, d);
    l.ffn_norm = gain();
    l.w_gate = matrix(h, d);
    l.w_up = matrix(h, d);
    l.w_down = matrix(d, h);
    p.layers.push_back(std::move(l));
  }
  p.final_norm = gain();
  p.output = config.tie_embeddings ? p.tok_embedding : matrix(N, d);
  return p;
}

Tensor forward(const ModelParams& params, const TokenBatch& tokens) {
  const ModelConfig& c = params.config;
  const std::size_t B = tokens.batch, T = tokens.seq;
  if (B == 0 || T == 0) throw InputError("forward: empty batch");
  if (T > c.seq_len) {
    throw InputError("forward: sequence length " + std::to_string(T) + " exceeds seq_len " +
                     std::to_string(c.seq_len));
  }
  if (tokens.ids.size() != B * T) throw InputError("forward: ids do not match batch x seq");
  for (std::int32_t id : tokens.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
      throw InputError("forward: token id " + std::to_string(id) + " outside vocabulary");
    }
  }

  Tensor x = ops::embedding(params.tok_embedding, tokens.ids);
  if (!c.rotary) {
    std::vector<std::int32_t> pos(B * T);
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<std::int32_t>(i % T);
    x = ops::add(x, ops::embedding(params.pos_embedding, pos));
  }
  for (const LayerParams& l : params.layers) {
    Tensor h = ops::rms_norm(x, l.attn_norm, c.norm_eps);
    Tensor q = ops::linear(h, l.wq);
    Tensor k = ops::linear(h, l.wk);
    Tensor v = ops::linear(h, l.wv);
    if (c.rotary) {
      q = ops::rotary(q, B, T, c.n_heads);
      k = ops::rotary(k, B, T, c.n_heads);
    }
    Tensor attn = ops::causal_attention(q, k, v, B, T, c.n_heads);
    x = ops::add(x, ops::linear(attn, l.wo));

    h = ops::rms_norm(x, l.ffn_norm, c.norm_eps);
    Tensor gate = ops::linear(h, l.w_gate);
    gate = c.activation == Activation::kSiLU ? ops::silu(gate) : ops::gelu(gate);
    Tensor up = ops::linear(h, l.w_up);
    x = ops::add(x, ops::linear(ops::mul(gate, up), l.w_down));
  }
  x = ops::rms_norm(x, params.final_norm, c.norm_eps);
  Tensor logits = ops::linear(x, params.output);
  return ops::reshape(logits, {B, T, c.vocab_size});
}

}  // namespace mile
