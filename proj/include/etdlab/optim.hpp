#pragma once

#include <span>
#include <vector>

#include "etdlab/tensor.hpp"

namespace etdlab {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// First/second moment buffers, one pair per parameter, in parameter order.
struct AdamWState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  int64_t step = 0;

  static AdamWState init(std::span<Tensor* const> params);
};

/// One AdamW update with bias-corrected moments and decoupled weight decay.
/// Empty grads count as zero.
void adamw_step(std::span<Tensor* const> params, AdamWState& state, const AdamWConfig& cfg);

/// L2 norm over all grads, accumulated in parameter order.
double global_grad_norm(std::span<Tensor* const> params);

/// Scales grads so the global norm is at most max_norm. Returns the
/// pre-clip norm.
double clip_global_norm(std::span<Tensor* const> params, double max_norm);

}  // namespace etdlab
