#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mile/tensor.hpp"

namespace mile {

enum class Activation { kSiLU, kGELU };

std::string_view to_string(Activation a) noexcept;
Activation parse_activation(std::string_view name);

/// Shape of a decoder-only transformer: pre-RMSNorm blocks with causal
/// multi-head attention and a gated feed-forward network.
struct ModelConfig {
  std::size_t dim = 64;
  std::size_t n_heads = 2;
  std::size_t n_layers = 2;
  std::size_t vocab_size = 512;
  std::size_t seq_len = 128;
  std::uint64_t seed = 0;
  /// Feed-forward width; 0 selects 8*dim/3 rounded up to a multiple of 8.
  std::size_t ffn_hidden = 0;
  /// Rotary position embedding; learned absolute positions otherwise.
  bool rotary = true;
  Activation activation = Activation::kSiLU;
  bool tie_embeddings = false;
  double norm_eps = 1e-6;

  std::size_t head_dim() const noexcept { return dim / n_heads; }
  std::size_t hidden_dim() const noexcept;
  /// Throws ConfigError on an inconsistent shape.
  void validate() const;

  /// "tiny" (dim 64, 2 layers, 2 heads, N 512, T 128), "small" (dim 128,
  /// 4 layers, 4 heads, N 2048, T 256); "desk" is an alias for "tiny".
  static ModelConfig preset(std::string_view name);
};

struct LayerParams {
  Tensor attn_norm;  // [dim]
  Tensor wq, wk, wv, wo;  // [dim x dim]
  Tensor ffn_norm;  // [dim]
  Tensor w_gate, w_up;  // [hidden x dim]
  Tensor w_down;  // [dim x hidden]
};

struct ModelParams {
  ModelConfig config;
  Tensor tok_embedding;  // [N x dim]
  Tensor pos_embedding;  // [seq_len x dim], only without rotary
  std::vector<LayerParams> layers;
  Tensor final_norm;  // [dim]
  Tensor output;  // [N x dim]; aliases tok_embedding when tied

  /// Every distinct trainable tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  void zero_grad();
  ModelParams clone() const;
};

struct ParamCount {
  std::size_t embedding = 0;
  std::size_t positional = 0;
  std::size_t per_layer = 0;
  std::size_t layers = 0;
  std::size_t final_norm = 0;
  std::size_t output = 0;
  std::size_t total = 0;
};

/// Exact parameter count from the config's shapes. n_layers may be 0 here.
ParamCount count_params(const ModelConfig& config);

/// Deterministic initialization: matrices ~ N(0, 1/dim), norm gains 1.
ModelParams init_model(const ModelConfig& config);

/// Token ids for a batch of equal-length sequences, row-major [batch x seq].
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> ids;
};

/// Logits [batch x seq x N]. Position i sees tokens 0..i only.
Tensor forward(const ModelParams& params, const TokenBatch& tokens);

/// Checkpoint I/O. Layout: "MILO1", u64 length + config JSON, u32 tensor
/// count, then per tensor u32 name length, name, u32 rank, u64 dims, and the
/// values as little-endian float64.
void save_model(const ModelParams& params, const std::string& path);
ModelParams load_model(const std::string& path);

}  // namespace mile
