#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "etdlab/model.hpp"

namespace etdlab {

/// Layer partition: the first n_encoder layers run once, the next n_think
/// layers run `iterations` times with the same weights, the final n_decoder
/// layers run once.
struct EtdConfig {
  int64_t n_encoder = 0;
  int64_t n_think = 1;
  int64_t iterations = 1;
  int64_t n_decoder = 0;

  void validate() const;
  void validate_for(int64_t n_layers) const;

  /// "7-4*2-5"
  std::string label() const;
  /// "7-4*k-5", iteration count left symbolic.
  std::string label_template() const;

  /// Parses "NE-NT*k-ND" with numeric k.
  static EtdConfig parse(std::string_view s);
  /// Parses the same grammar but accepts a literal 'k'; second member is
  /// false when k was symbolic (iterations defaults to 1).
  static std::pair<EtdConfig, bool> parse_allow_template(std::string_view s);

  static EtdConfig full_stack(int64_t n_layers, int64_t iterations = 1);

  bool operator==(const EtdConfig&) const = default;
};

/// Distinct-layer count N_E + N_T + N_D; independent of iterations.
int64_t param_layer_count(const EtdConfig& etd);

/// Executed-layer count N_E + N_T * k + N_D.
int64_t flops_layer_count(const EtdConfig& etd);

/// Partitioned forward pass with weight tying across iterations. Identical
/// parameter set to forward_plain; gradients from every iteration accumulate
/// into the shared think-block weights. When `trace` is non-null it receives
/// the executed layer indices in order.
Tensor forward_etd(std::span<const int32_t> tokens, int64_t batch, int64_t seq,
                   const ModelParams& params, const EtdConfig& etd,
                   std::vector<int>* trace = nullptr);

/// Runs a no-grad forward and returns the executed layer-index sequence.
std::vector<int> runtime_layer_trace(std::span<const int32_t> tokens, int64_t batch, int64_t seq,
                                     const ModelParams& params, const EtdConfig& etd);

}  // namespace etdlab
