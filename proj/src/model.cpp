#include "etdlab/model.hpp"

#include <cmath>

#include "etdlab/kernels.hpp"

namespace etdlab {

namespace {

Tensor randn(Shape shape, double stdev, Rng& rng) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (double& x : data) x = stdev * rng.normal();
  return Tensor::param(std::move(shape), std::move(data));
}

Tensor ones_param(int64_t n) {
  return Tensor::param({n}, std::vector<double>(static_cast<size_t>(n), 1.0));
}

// cos/sin of position * base^(-2p/dh) for every (position, pair).
struct RopeTable {
  int64_t seq = 0, half = 0;
  std::vector<double> c, s;

  RopeTable(int64_t seq_len, int64_t head_dim, double base) : seq(seq_len), half(head_dim / 2) {
    c.resize(static_cast<size_t>(seq * half));
    s.resize(static_cast<size_t>(seq * half));
    for (int64_t pos = 0; pos < seq; ++pos) {
      for (int64_t p = 0; p < half; ++p) {
        const double freq =
            std::pow(base, -2.0 * static_cast<double>(p) / static_cast<double>(2 * half));
        const double theta = static_cast<double>(pos) * freq;
        c[static_cast<size_t>(pos * half + p)] = std::cos(theta);
        s[static_cast<size_t>(pos * half + p)] = std::sin(theta);
      }
    }
  }

  void rotate(const double* src, double* dst, int64_t pos) const {
    const double* cr = c.data() + pos * half;
    const double* sr = s.data() + pos * half;
    for (int64_t p = 0; p < half; ++p) {
      const double x = src[2 * p], y = src[2 * p + 1];
      dst[2 * p] = x * cr[p] - y * sr[p];
      dst[2 * p + 1] = x * sr[p] + y * cr[p];
    }
  }

  // Transpose of rotate: maps gradients w.r.t. rotated values back.
  void rotate_back(const double* src, double* dst, int64_t pos) const {
    const double* cr = c.data() + pos * half;
    const double* sr = s.data() + pos * half;
    for (int64_t p = 0; p < half; ++p) {
      const double gx = src[2 * p], gy = src[2 * p + 1];
      dst[2 * p] = gx * cr[p] + gy * sr[p];
      dst[2 * p + 1] = -gx * sr[p] + gy * cr[p];
    }
  }
};

}  // namespace

Activation activation_from_string(const std::string& s) {
  if (s == "silu") return Activation::silu;
  if (s == "gelu") return Activation::gelu;
  fail(ErrorKind::config, "unknown activation '" + s + "'");
}

const char* activation_name(Activation a) {
  return a == Activation::silu ? "silu" : "gelu";
}

void ModelConfig::validate() const {
  if (vocab_size <= 0 || d_model <= 0 || n_heads <= 0 || d_ff <= 0 || n_layers <= 0 ||
      max_seq_len <= 0)
    fail(ErrorKind::config, "model config fields must be positive");
  if (d_model % n_heads != 0)
    fail(ErrorKind::config, "d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                                std::to_string(n_heads));
  if ((d_model / n_heads) % 2 != 0)
    fail(ErrorKind::config, "head dim must be even for rotary pairs");
  if (n_layers < 3) fail(ErrorKind::config, "n_layers must be >= 3");
  if (!(norm_eps > 0.0)) fail(ErrorKind::config, "norm_eps must be > 0");
}

std::vector<Tensor*> ModelParams::all() {
  std::vector<Tensor*> out;
  out.reserve(2 + layers.size() * 8 + 1);
  out.push_back(&embedding);
  for (LayerParams& l : layers) {
    out.push_back(&l.attn_norm_gain);
    out.push_back(&l.wq);
    out.push_back(&l.wk);
    out.push_back(&l.wv);
    out.push_back(&l.wo);
    out.push_back(&l.mlp_norm_gain);
    out.push_back(&l.w_in);
    out.push_back(&l.w_out);
  }
  out.push_back(&final_norm_gain);
  out.push_back(&unembed);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("embed", &embedding);
  for (size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    out.emplace_back(p + "attn_norm", &layers[i].attn_norm_gain);
    out.emplace_back(p + "wq", &layers[i].wq);
    out.emplace_back(p + "wk", &layers[i].wk);
    out.emplace_back(p + "wv", &layers[i].wv);
    out.emplace_back(p + "wo", &layers[i].wo);
    out.emplace_back(p + "mlp_norm", &layers[i].mlp_norm_gain);
    out.emplace_back(p + "w_in", &layers[i].w_in);
    out.emplace_back(p + "w_out", &layers[i].w_out);
  }
  out.emplace_back("final_norm", &final_norm_gain);
  out.emplace_back("unembed", &unembed);
  return out;
}

int64_t ModelParams::scalar_count() const {
  int64_t n = embedding.numel() + final_norm_gain.numel() + unembed.numel();
  for (const LayerParams& l : layers) {
    n += l.attn_norm_gain.numel() + l.wq.numel() + l.wk.numel() + l.wv.numel() + l.wo.numel() +
         l.mlp_norm_gain.numel() + l.w_in.numel() + l.w_out.numel();
  }
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  out.config = config;
  out.embedding = embedding.clone();
  out.layers.reserve(layers.size());
  for (const LayerParams& l : layers) {
    out.layers.push_back(LayerParams{l.attn_norm_gain.clone(), l.wq.clone(), l.wk.clone(),
                                     l.wv.clone(), l.wo.clone(), l.mlp_norm_gain.clone(),
                                     l.w_in.clone(), l.w_out.clone()});
  }
  out.final_norm_gain = final_norm_gain.clone();
  out.unembed = unembed.clone();
  return out;
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const int64_t d = config.d_model;
  const double fan = 1.0 / std::sqrt(static_cast<double>(d));
  // Residual-output projections get an extra 1/sqrt(2L) so depth does not
  // inflate the stream at initialization.
  const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_layers));

  ModelParams p;
  p.config = config;
  p.embedding = randn({config.vocab_size, d}, fan, rng);
  p.layers.reserve(static_cast<size_t>(config.n_layers));
  for (int64_t i = 0; i < config.n_layers; ++i) {
    LayerParams l;
    l.attn_norm_gain = ones_param(d);
    l.wq = randn({d, d}, fan, rng);
    l.wk = randn({d, d}, fan, rng);
    l.wv = randn({d, d}, fan, rng);
    l.wo = randn({d, d}, fan * out_scale, rng);
    l.mlp_norm_gain = ones_param(d);
    l.w_in = randn({d, config.d_ff}, fan, rng);
    l.w_out = randn({config.d_ff, d},
                    out_scale / std::sqrt(static_cast<double>(config.d_ff)), rng);
    p.layers.push_back(std::move(l));
  }
  p.final_norm_gain = ones_param(d);
  // Small head: initial logits stay near uniform, so the initial loss sits
  // near ln(V).
  p.unembed = randn({d, config.vocab_size}, 0.5 * fan, rng);
  return p;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t n_heads,
                 double rope_base, AttnMask mask) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape())
    fail(ErrorKind::dimension, "attention: q,k,v must share shape [batch, seq, d]");
  const int64_t batch = q.size(0), seq = q.size(1), d = q.size(2);
  if (d % n_heads != 0) fail(ErrorKind::dimension, "attention: d not divisible by n_heads");
  const int64_t dh = d / n_heads;
  const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool causal = mask == AttnMask::causal;

  auto rope = std::make_shared<RopeTable>(seq, dh, rope_base);
  // Rotated queries/keys and attention probabilities, saved for backward.
  std::vector<double> qr(static_cast<size_t>(batch * n_heads * seq * dh));
  std::vector<double> kr(static_cast<size_t>(batch * n_heads * seq * dh));
  std::vector<double> probs(static_cast<size_t>(batch * n_heads * seq * seq), 0.0);
  std::vector<double> out(static_cast<size_t>(batch * seq * d), 0.0);

  const auto& K = kernels::active();
  const double* qd = q.data().data();
  const double* kd = k.data().data();
  const double* vd = v.data().data();
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t h = 0; h < n_heads; ++h) {
      double* qrh = qr.data() + ((b * n_heads + h) * seq) * dh;
      double* krh = kr.data() + ((b * n_heads + h) * seq) * dh;
      double* ph = probs.data() + ((b * n_heads + h) * seq) * seq;
      for (int64_t sPos = 0; sPos < seq; ++sPos) {
        rope->rotate(qd + (b * seq + sPos) * d + h * dh, qrh + sPos * dh, sPos);
        rope->rotate(kd + (b * seq + sPos) * d + h * dh, krh + sPos * dh, sPos);
      }
      std::vector<double> srow(static_cast<size_t>(seq));
      for (int64_t i = 0; i < seq; ++i) {
        const int64_t bound = causal ? i : seq - 1;
        double mx = -1e300;
        for (int64_t j = 0; j <= bound; ++j) {
          srow[static_cast<size_t>(j)] =
              alpha * K.dot(qrh + i * dh, krh + j * dh, static_cast<size_t>(dh));
          mx = std::max(mx, srow[static_cast<size_t>(j)]);
        }
        double z = 0.0;
        for (int64_t j = 0; j <= bound; ++j) {
          const double e = std::exp(srow[static_cast<size_t>(j)] - mx);
          ph[i * seq + j] = e;
          z += e;
        }
        const double inv = 1.0 / z;
        double* orow = out.data() + (b * seq + i) * d + h * dh;
        for (int64_t j = 0; j <= bound; ++j) {
          ph[i * seq + j] *= inv;
          K.axpy(orow, ph[i * seq + j], vd + (b * seq + j) * d + h * dh, static_cast<size_t>(dh));
        }
      }
    }
  }

  return make_op(
      q.shape(), std::move(out), {q, k, v},
      [batch, seq, d, n_heads, dh, alpha, causal, rope, qr = std::move(qr), kr = std::move(kr),
       probs = std::move(probs)](TensorNode& node) {
        const auto& K = kernels::active();
        TensorNode& pq = *node.parents[0];
        TensorNode& pk = *node.parents[1];
        TensorNode& pv = *node.parents[2];
        pq.ensure_grad();
        pk.ensure_grad();
        pv.ensure_grad();
        std::vector<double> dqr(static_cast<size_t>(seq * dh));
        std::vector<double> dkr(static_cast<size_t>(seq * dh));
        std::vector<double> dp(static_cast<size_t>(seq));
        std::vector<double> ds(static_cast<size_t>(seq));
        std::vector<double> tmp(static_cast<size_t>(dh));
        for (int64_t b = 0; b < batch; ++b) {
          for (int64_t h = 0; h < n_heads; ++h) {
            const double* qrh = qr.data() + ((b * n_heads + h) * seq) * dh;
            const double* krh = kr.data() + ((b * n_heads + h) * seq) * dh;
            const double* ph = probs.data() + ((b * n_heads + h) * seq) * seq;
            std::fill(dqr.begin(), dqr.end(), 0.0);
            std::fill(dkr.begin(), dkr.end(), 0.0);
            for (int64_t i = 0; i < seq; ++i) {
              const int64_t bound = causal ? i : seq - 1;
              const double* go = node.grad.data() + (b * seq + i) * d + h * dh;
              // dV rows and dP entries
              double pg = 0.0;
              for (int64_t j = 0; j <= bound; ++j) {
                const double pij = ph[i * seq + j];
                K.axpy(pv.grad.data() + (b * seq + j) * d + h * dh, pij, go,
                       static_cast<size_t>(dh));
                dp[static_cast<size_t>(j)] =
                    K.dot(go, pv.value.data() + (b * seq + j) * d + h * dh,
                          static_cast<size_t>(dh));
                pg += pij * dp[static_cast<size_t>(j)];
              }
              // softmax backward, then score gradient into dQr/dKr
              for (int64_t j = 0; j <= bound; ++j) {
                const double dsij = ph[i * seq + j] * (dp[static_cast<size_t>(j)] - pg) * alpha;
                ds[static_cast<size_t>(j)] = dsij;
                K.axpy(dkr.data() + j * dh, dsij, qrh + i * dh, static_cast<size_t>(dh));
              }
              for (int64_t j = 0; j <= bound; ++j)
                K.axpy(dqr.data() + i * dh, ds[static_cast<size_t>(j)], krh + j * dh,
                       static_cast<size_t>(dh));
            }
            for (int64_t sPos = 0; sPos < seq; ++sPos) {
              rope->rotate_back(dqr.data() + sPos * dh, tmp.data(), sPos);
              K.axpy(pq.grad.data() + (b * seq + sPos) * d + h * dh, 1.0, tmp.data(),
                     static_cast<size_t>(dh));
              rope->rotate_back(dkr.data() + sPos * dh, tmp.data(), sPos);
              K.axpy(pk.grad.data() + (b * seq + sPos) * d + h * dh, 1.0, tmp.data(),
                     static_cast<size_t>(dh));
            }
          }
        }
      });
}

Tensor layer_apply(const Tensor& x, const LayerParams& layer, const ModelConfig& config,
                   AttnMask mask, Tensor* contribution) {
  if (x.rank() != 3 || x.size(2) != config.d_model)
    fail(ErrorKind::dimension, "layer_apply: expected [batch, seq, d_model], got " +
                                   shape_str(x.shape()));
  if (x.size(1) > config.max_seq_len)
    fail(ErrorKind::dimension, "layer_apply: seq " + std::to_string(x.size(1)) +
                                   " exceeds max_seq_len " + std::to_string(config.max_seq_len));
  Tensor xn = rms_norm(x, layer.attn_norm_gain, config.norm_eps);
  Tensor q = matmul(xn, layer.wq);
  Tensor k = matmul(xn, layer.wk);
  Tensor v = matmul(xn, layer.wv);
  Tensor attn = attention(q, k, v, config.n_heads, config.rope_base, mask);
  Tensor attn_out = matmul(attn, layer.wo);
  Tensor h = add(x, attn_out);
  Tensor hn = rms_norm(h, layer.mlp_norm_gain, config.norm_eps);
  Tensor inner = matmul(hn, layer.w_in);
  Tensor acted = config.activation == Activation::silu ? silu(inner) : gelu(inner);
  Tensor mlp_out = matmul(acted, layer.w_out);
  Tensor out = add(h, mlp_out);
  if (contribution != nullptr) {
    std::vector<double> c(attn_out.data().size());
    kernels::active().add(c.data(), attn_out.data().data(), mlp_out.data().data(), c.size());
    *contribution = Tensor::from_data(x.shape(), std::move(c));
  }
  return out;
}

Tensor embed_tokens(const ModelParams& params, std::span<const int32_t> tokens, int64_t batch,
                    int64_t seq) {
  if (seq > params.config.max_seq_len)
    fail(ErrorKind::input, "sequence length " + std::to_string(seq) + " exceeds max_seq_len " +
                               std::to_string(params.config.max_seq_len));
  return embed_lookup(params.embedding, tokens, batch, seq);
}

Tensor lm_head(const Tensor& x, const ModelParams& params) {
  return matmul(rms_norm(x, params.final_norm_gain, params.config.norm_eps), params.unembed);
}

Tensor forward_plain(std::span<const int32_t> tokens, int64_t batch, int64_t seq,
                     const ModelParams& params) {
  Tensor x = embed_tokens(params, tokens, batch, seq);
  for (const LayerParams& layer : params.layers) x = layer_apply(x, layer, params.config);
  return lm_head(x, params);
}

std::vector<Tensor> capture_residuals(std::span<const int32_t> tokens, int64_t batch, int64_t seq,
                                      const ModelParams& params,
                                      std::vector<Tensor>* contributions) {
  NoGrad ng;
  std::vector<Tensor> states;
  states.reserve(params.layers.size() + 1);
  if (contributions != nullptr) {
    contributions->clear();
    contributions->reserve(params.layers.size());
  }
  Tensor x = embed_tokens(params, tokens, batch, seq);
  states.push_back(x);
  for (const LayerParams& layer : params.layers) {
    Tensor contrib;
    x = layer_apply(x, layer, params.config, AttnMask::causal,
                    contributions != nullptr ? &contrib : nullptr);
    if (contributions != nullptr) contributions->push_back(contrib);
    states.push_back(x);
  }
  return states;
}

}  // namespace etdlab
