#include "etdlab/etd.hpp"

#include <charconv>

namespace etdlab {

namespace {

int64_t parse_int(std::string_view s, std::string_view whole) {
  int64_t out = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size())
    fail(ErrorKind::config, "bad partition label '" + std::string(whole) +
                                "', expected \"NE-NT*k-ND\" like \"7-4*2-5\"");
  return out;
}

}  // namespace

void EtdConfig::validate() const {
  if (n_encoder < 0 || n_decoder < 0)
    fail(ErrorKind::config, "partition " + label() + ": encoder/decoder sizes must be >= 0");
  if (n_think < 1) fail(ErrorKind::config, "partition " + label() + ": think block needs >= 1 layer");
  if (iterations < 1) fail(ErrorKind::config, "partition " + label() + ": iterations must be >= 1");
}

void EtdConfig::validate_for(int64_t n_layers) const {
  validate();
  if (n_encoder + n_think + n_decoder != n_layers)
    fail(ErrorKind::config, "partition " + label() + " covers " +
                                std::to_string(n_encoder + n_think + n_decoder) +
                                " layers but the model has " + std::to_string(n_layers));
}

std::string EtdConfig::label() const {
  return std::to_string(n_encoder) + "-" + std::to_string(n_think) + "*" +
         std::to_string(iterations) + "-" + std::to_string(n_decoder);
}

std::string EtdConfig::label_template() const {
  return std::to_string(n_encoder) + "-" + std::to_string(n_think) + "*k-" +
         std::to_string(n_decoder);
}

std::pair<EtdConfig, bool> EtdConfig::parse_allow_template(std::string_view s) {
  const size_t dash1 = s.find('-');
  const size_t star = s.find('*', dash1 == std::string_view::npos ? 0 : dash1 + 1);
  const size_t dash2 = s.find('-', star == std::string_view::npos ? 0 : star + 1);
  if (dash1 == std::string_view::npos || star == std::string_view::npos ||
      dash2 == std::string_view::npos)
    fail(ErrorKind::config,
         "bad partition label '" + std::string(s) + "', expected \"NE-NT*k-ND\" like \"7-4*2-5\"");
  EtdConfig cfg;
  cfg.n_encoder = parse_int(s.substr(0, dash1), s);
  cfg.n_think = parse_int(s.substr(dash1 + 1, star - dash1 - 1), s);
  std::string_view kpart = s.substr(star + 1, dash2 - star - 1);
  bool k_given = kpart != "k";
  cfg.iterations = k_given ? parse_int(kpart, s) : 1;
  cfg.n_decoder = parse_int(s.substr(dash2 + 1), s);
  cfg.validate();
  return {cfg, k_given};
}

EtdConfig EtdConfig::parse(std::string_view s) {
  auto [cfg, k_given] = parse_allow_template(s);
  if (!k_given)
    fail(ErrorKind::config, "partition label '" + std::string(s) + "' needs a numeric k");
  return cfg;
}

EtdConfig EtdConfig::full_stack(int64_t n_layers, int64_t iterations) {
  return EtdConfig{0, n_layers, iterations, 0};
}

int64_t param_layer_count(const EtdConfig& etd) {
  etd.validate();
  return etd.n_encoder + etd.n_think + etd.n_decoder;
}

int64_t flops_layer_count(const EtdConfig& etd) {
  etd.validate();
  return etd.n_encoder + etd.n_think * etd.iterations + etd.n_decoder;
}

Tensor forward_etd(std::span<const int32_t> tokens, int64_t batch, int64_t seq,
                   const ModelParams& params, const EtdConfig& etd, std::vector<int>* trace) {
  etd.validate_for(params.config.n_layers);
  if (trace != nullptr) trace->clear();
  auto run = [&](Tensor x, int64_t lo, int64_t hi) {
    for (int64_t l = lo; l < hi; ++l) {
      x = layer_apply(x, params.layers[static_cast<size_t>(l)], params.config);
      if (trace != nullptr) trace->push_back(static_cast<int>(l));
    }
    return x;
  };
  const int64_t t0 = etd.n_encoder;
  const int64_t t1 = etd.n_encoder + etd.n_think;
  Tensor x = embed_tokens(params, tokens, batch, seq);
  x = run(x, 0, t0);
  for (int64_t it = 0; it < etd.iterations; ++it) x = run(x, t0, t1);
  x = run(x, t1, params.config.n_layers);
  return lm_head(x, params);
}

std::vector<int> runtime_layer_trace(std::span<const int32_t> tokens, int64_t batch, int64_t seq,
                                     const ModelParams& params, const EtdConfig& etd) {
  NoGrad ng;
  std::vector<int> trace;
  forward_etd(tokens, batch, seq, params, etd, &trace);
  return trace;
}

}  // namespace etdlab
