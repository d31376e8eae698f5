#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "etdlab/tensor.hpp"

namespace etdlab {

enum class Activation { silu, gelu };

Activation activation_from_string(const std::string& s);
const char* activation_name(Activation a);

struct ModelConfig {
  int64_t vocab_size = 128;
  int64_t d_model = 64;
  int64_t n_heads = 4;
  int64_t d_ff = 256;
  int64_t n_layers = 8;
  int64_t max_seq_len = 64;
  double norm_eps = 1e-6;
  uint64_t seed = 1;
  Activation activation = Activation::silu;
  double rope_base = 10000.0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// One pre-norm residual block: attention projections, MLP weights and the
/// two norm gains.
struct LayerParams {
  Tensor attn_norm_gain;  // [d]
  Tensor wq, wk, wv, wo;  // [d, d]
  Tensor mlp_norm_gain;   // [d]
  Tensor w_in;            // [d, d_ff]
  Tensor w_out;           // [d_ff, d]
};

struct ModelParams {
  ModelConfig config;
  Tensor embedding;  // [V, d]
  std::vector<LayerParams> layers;
  Tensor final_norm_gain;  // [d]
  Tensor unembed;          // [d, V]

  /// Canonical parameter order; fixes checkpoint layout, optimizer-state
  /// order and gradient reduction order.
  std::vector<Tensor*> all();
  std::vector<std::pair<std::string, Tensor*>> named();
  int64_t scalar_count() const;
  ModelParams clone() const;
};

/// Deterministic fan-in-scaled initialization from config.seed.
ModelParams init_params(const ModelConfig& config);

enum class AttnMask { causal, none };

/// Multi-head attention over already-projected q,k,v [batch, seq, d], with
/// rotary position encoding applied to q and k inside the op.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t n_heads,
                 double rope_base, AttnMask mask = AttnMask::causal);

/// One residual update x + f(x, theta): pre-norm attention sublayer followed
/// by pre-norm MLP sublayer. When `contribution` is non-null it receives
/// f(x, theta) = attention contribution + MLP contribution (no grad).
Tensor layer_apply(const Tensor& x, const LayerParams& layer, const ModelConfig& config,
                   AttnMask mask = AttnMask::causal, Tensor* contribution = nullptr);

/// Token embedding; validates ids against the vocab and seq length.
Tensor embed_tokens(const ModelParams& params, std::span<const int32_t> tokens, int64_t batch,
                    int64_t seq);

/// Final norm + unembedding.
Tensor lm_head(const Tensor& x, const ModelParams& params);

/// embed -> layers 0..L-1 in order -> final norm -> unembed.
Tensor forward_plain(std::span<const int32_t> tokens, int64_t batch, int64_t seq,
                     const ModelParams& params);

/// Inputs to each layer plus the final residual state: x^0 .. x^L
/// (length L+1). Runs without grad. When `contributions` is non-null it
/// receives the L per-layer f(x^l, theta^l) terms.
std::vector<Tensor> capture_residuals(std::span<const int32_t> tokens, int64_t batch, int64_t seq,
                                      const ModelParams& params,
                                      std::vector<Tensor>* contributions = nullptr);

}  // namespace etdlab
