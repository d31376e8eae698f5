#include "etdlab/optim.hpp"

#include <cmath>

#include "etdlab/kernels.hpp"

namespace etdlab {

AdamWState AdamWState::init(std::span<Tensor* const> params) {
  AdamWState st;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Tensor* p : params) {
    st.m.emplace_back(p->data().size(), 0.0);
    st.v.emplace_back(p->data().size(), 0.0);
  }
  return st;
}

void adamw_step(std::span<Tensor* const> params, AdamWState& state, const AdamWConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    fail(ErrorKind::config, "adamw_step: state does not match parameter list");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    if (state.m[pi].size() != p.data().size())
      fail(ErrorKind::config, "adamw_step: state shape mismatch at parameter " + std::to_string(pi));
    std::span<double> w = p.raw_data();
    std::span<const double> g = p.grad();
    std::vector<double>& m = state.m[pi];
    std::vector<double>& v = state.v[pi];
    for (size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w[i]);
    }
  }
}

double global_grad_norm(std::span<Tensor* const> params) {
  double total = 0.0;
  const auto& K = kernels::active();
  for (const Tensor* p : params) {
    std::span<const double> g = p->grad();
    if (!g.empty()) total += K.sum_sq(g.data(), g.size());
  }
  return std::sqrt(total);
}

double clip_global_norm(std::span<Tensor* const> params, double max_norm) {
  if (!(max_norm > 0.0)) fail(ErrorKind::config, "clip_global_norm: max_norm must be > 0");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor* p : params) {
      std::span<const double> g = p->grad();
      if (g.empty()) continue;
      kernels::active().scale(p->raw_grad().data(), g.data(), s, g.size());
    }
  }
  return norm;
}

}  // namespace etdlab
