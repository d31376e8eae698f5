#pragma once

#include <optional>

#include "etdlab/etd.hpp"

namespace etdlab {

/// Halting router: linear projection of the hidden state plus sigmoid.
struct RouterParams {
  Tensor weight;  // [d, 1]
  Tensor bias;    // [1]

  static RouterParams init(int64_t d_model, uint64_t seed);
  std::vector<Tensor*> all();
  RouterParams clone() const;
};

struct ActOptions {
  double epsilon = 0.01;
  int64_t n_max = 10;
  /// Optional halting regularizer weight. 0 disables it, which leaves the
  /// router without any differentiable consumer (hard thresholds only).
  double ponder_cost = 0.0;

  void validate() const;
};

/// Per-token halting bookkeeping. halt_mass accumulates the router outputs;
/// a token freezes once its mass reaches 1 - epsilon, and every token stops
/// at n_max at the latest.
struct HaltingState {
  int64_t batch = 0, seq = 0;
  double epsilon = 0.0;
  int64_t n_max = 0;
  std::vector<double> halt_mass;            // per token
  std::vector<int> steps_used;              // in [1, n_max]
  std::vector<uint8_t> halted_by_threshold; // else stopped by the cap
  std::vector<uint8_t> valid;               // non-padding tokens
  /// Per-iteration log for replay: router outputs and the tokens that were
  /// active when each iteration ran.
  std::vector<std::vector<double>> iter_w;
  std::vector<std::vector<uint8_t>> iter_active;

  void check_invariants() const;  // fails on violation
};

struct ActForwardResult {
  Tensor logits;
  HaltingState state;
  Tensor ponder;  // defined iff options.ponder_cost > 0
};

/// sigmoid(h . weight + bias), shape [batch, seq, 1].
Tensor router_eval(const Tensor& h, const RouterParams& router);

/// Adaptive-depth forward: encoder once, think block up to n_max times with
/// per-token freezing, decoder once. etd.iterations is ignored. Frozen
/// tokens keep their rows bit-identical and still serve as attention
/// keys/values. Every token runs at least one iteration.
/// `valid` marks non-padding tokens for the stats (empty = all valid);
/// `iter_states` optionally captures the post-merge hidden state after each
/// iteration.
ActForwardResult act_forward(std::span<const int32_t> tokens, int64_t batch, int64_t seq,
                             const ModelParams& params, const EtdConfig& etd,
                             const RouterParams& router, const ActOptions& options,
                             std::span<const uint8_t> valid = {},
                             std::vector<Tensor>* iter_states = nullptr);

struct ActStats {
  double mean_steps = 0.0;
  std::vector<int64_t> histogram;  // index 0 unused; bins 1..n_max
  double frac_threshold = 0.0;
  double frac_cap = 0.0;
  int64_t tokens = 0;
};

ActStats act_stats(const HaltingState& state);

}  // namespace etdlab
