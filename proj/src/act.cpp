#include "etdlab/act.hpp"

#include <algorithm>
#include <cmath>

namespace etdlab {

RouterParams RouterParams::init(int64_t d_model, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(static_cast<size_t>(d_model));
  const double stdev = 1.0 / std::sqrt(static_cast<double>(d_model));
  for (double& x : w) x = stdev * rng.normal();
  RouterParams r;
  r.weight = Tensor::param({d_model, 1}, std::move(w));
  r.bias = Tensor::param({1}, {0.0});
  return r;
}

std::vector<Tensor*> RouterParams::all() { return {&weight, &bias}; }

RouterParams RouterParams::clone() const {
  RouterParams r;
  r.weight = weight.clone();
  r.bias = bias.clone();
  return r;
}

void ActOptions::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0))
    fail(ErrorKind::config, "epsilon must lie in (0, 1), got " + std::to_string(epsilon));
  if (n_max < 1) fail(ErrorKind::config, "n_max must be >= 1");
  if (ponder_cost < 0.0) fail(ErrorKind::config, "ponder_cost must be >= 0");
}

void HaltingState::check_invariants() const {
  const size_t n = static_cast<size_t>(batch * seq);
  if (halt_mass.size() != n || steps_used.size() != n || halted_by_threshold.size() != n)
    fail(ErrorKind::usage, "halting state buffers inconsistent");
  for (size_t i = 0; i < n; ++i) {
    if (steps_used[i] < 1 || steps_used[i] > n_max)
      fail(ErrorKind::usage, "steps_used outside [1, n_max]");
    if (halted_by_threshold[i] && halt_mass[i] < 1.0 - epsilon)
      fail(ErrorKind::usage, "threshold-halted token with insufficient mass");
    if (!halted_by_threshold[i] && steps_used[i] != n_max)
      fail(ErrorKind::usage, "cap-halted token did not run n_max iterations");
  }
}

Tensor router_eval(const Tensor& h, const RouterParams& router) {
  return sigmoid(add(matmul(h, router.weight), router.bias));
}

ActForwardResult act_forward(std::span<const int32_t> tokens, int64_t batch, int64_t seq,
                             const ModelParams& params, const EtdConfig& etd,
                             const RouterParams& router, const ActOptions& options,
                             std::span<const uint8_t> valid, std::vector<Tensor>* iter_states) {
  options.validate();
  EtdConfig partition = etd;
  partition.iterations = 1;  // depth is dynamic here
  partition.validate_for(params.config.n_layers);
  const int64_t n_tokens = batch * seq;
  if (!valid.empty() && static_cast<int64_t>(valid.size()) != n_tokens)
    fail(ErrorKind::dimension, "act_forward: valid mask length != batch*seq");

  ActForwardResult res;
  HaltingState& st = res.state;
  st.batch = batch;
  st.seq = seq;
  st.epsilon = options.epsilon;
  st.n_max = options.n_max;
  st.halt_mass.assign(static_cast<size_t>(n_tokens), 0.0);
  st.steps_used.assign(static_cast<size_t>(n_tokens), 0);
  st.halted_by_threshold.assign(static_cast<size_t>(n_tokens), 0);
  st.valid = valid.empty() ? std::vector<uint8_t>(static_cast<size_t>(n_tokens), 1)
                           : std::vector<uint8_t>(valid.begin(), valid.end());

  const double threshold = 1.0 - options.epsilon;
  const int64_t t0 = partition.n_encoder;
  const int64_t t1 = partition.n_encoder + partition.n_think;

  auto run_segment = [&](Tensor x, int64_t lo, int64_t hi) {
    for (int64_t l = lo; l < hi; ++l)
      x = layer_apply(x, params.layers[static_cast<size_t>(l)], params.config);
    return x;
  };

  Tensor x = embed_tokens(params, tokens, batch, seq);
  x = run_segment(x, 0, t0);

  std::vector<uint8_t> frozen(static_cast<size_t>(n_tokens), 0);
  const bool want_ponder = options.ponder_cost > 0.0;
  Tensor ponder_sum = want_ponder ? Tensor::zeros({1}) : Tensor();

  for (int64_t it = 1; it <= options.n_max; ++it) {
    Tensor y = run_segment(x, t0, t1);
    Tensor w = router_eval(y, router);
    // Frozen rows carry their previous value; active rows take the fresh one.
    Tensor merged = where_rows(frozen, x, y);

    st.iter_w.emplace_back(w.data().begin(), w.data().end());
    std::vector<uint8_t> active(static_cast<size_t>(n_tokens));
    for (int64_t i = 0; i < n_tokens; ++i) active[static_cast<size_t>(i)] = !frozen[static_cast<size_t>(i)];
    st.iter_active.push_back(active);

    if (want_ponder) {
      Tensor active_mask = Tensor::from_data(
          {batch, seq, 1}, std::vector<double>(active.begin(), active.end()));
      ponder_sum = add(ponder_sum, sum(mul(w, active_mask)));
    }

    bool any_left = false;
    for (int64_t i = 0; i < n_tokens; ++i) {
      const size_t ui = static_cast<size_t>(i);
      if (frozen[ui]) continue;
      st.halt_mass[ui] += w.data()[ui];
      st.steps_used[ui] = static_cast<int>(it);
      if (st.halt_mass[ui] >= threshold) {
        st.halted_by_threshold[ui] = 1;
        frozen[ui] = 1;
      } else if (it < options.n_max) {
        any_left = true;
      }
    }
    x = merged;
    if (iter_states != nullptr) iter_states->push_back(x);
    if (!any_left) break;
  }

  x = run_segment(x, t1, params.config.n_layers);
  res.logits = lm_head(x, params);
  if (want_ponder) {
    int64_t n_valid = 0;
    for (uint8_t v : st.valid) n_valid += v != 0;
    res.ponder = scale(ponder_sum, 1.0 / static_cast<double>(std::max<int64_t>(1, n_valid)));
  }
  st.check_invariants();
  return res;
}

ActStats act_stats(const HaltingState& state) {
  state.check_invariants();
  ActStats out;
  out.histogram.assign(static_cast<size_t>(state.n_max) + 1, 0);
  int64_t total_steps = 0;
  int64_t by_threshold = 0;
  for (size_t i = 0; i < state.steps_used.size(); ++i) {
    if (!state.valid[i]) continue;
    ++out.tokens;
    total_steps += state.steps_used[i];
    out.histogram[static_cast<size_t>(state.steps_used[i])] += 1;
    by_threshold += state.halted_by_threshold[i] != 0;
  }
  if (out.tokens > 0) {
    out.mean_steps = static_cast<double>(total_steps) / static_cast<double>(out.tokens);
    out.frac_threshold = static_cast<double>(by_threshold) / static_cast<double>(out.tokens);
    out.frac_cap = 1.0 - out.frac_threshold;
  }
  return out;
}

}  // namespace etdlab
