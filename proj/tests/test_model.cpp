#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "testutil.hpp"

using namespace etdlab;
using namespace testutil;

TEST_CASE("init is deterministic in the seed") {
  ModelConfig cfg = tiny_config();
  ModelParams a = init_params(cfg);
  ModelParams b = init_params(cfg);
  auto na = a.named();
  auto nb = b.named();
  for (size_t i = 0; i < na.size(); ++i) CHECK(bit_equal(na[i].second->data(), nb[i].second->data()));
  cfg.seed = 77;
  ModelParams c = init_params(cfg);
  CHECK_FALSE(bit_equal(a.embedding.data(), c.embedding.data()));
}

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  cfg.d_model = 10;
  cfg.n_heads = 4;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("divisible"), Error);
  cfg = tiny_config();
  cfg.n_layers = 2;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.d_ff = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("initial loss on a random batch sits near ln V") {
  ModelConfig cfg;
  cfg.vocab_size = 64;
  cfg.d_model = 32;
  cfg.n_heads = 4;
  cfg.d_ff = 128;
  cfg.n_layers = 4;
  cfg.max_seq_len = 16;
  cfg.seed = 5;
  ModelParams p = init_params(cfg);
  Rng rng(101);
  auto tokens = random_tokens(4 * 12, cfg.vocab_size, rng);
  auto targets = random_tokens(4 * 12, cfg.vocab_size, rng);
  std::vector<uint8_t> mask(4 * 12, 1);
  Tensor logits = forward_plain(tokens, 4, 12, p);
  const double loss = cross_entropy(logits, targets, mask).item();
  CHECK(loss == doctest::Approx(std::log(64.0)).epsilon(0.10));
}

TEST_CASE("zeroed output projections make layer_apply the identity") {
  ModelConfig cfg = tiny_config();
  ModelParams p = init_params(cfg);
  LayerParams& layer = p.layers[0];
  std::fill(layer.wo.raw_data().begin(), layer.wo.raw_data().end(), 0.0);
  std::fill(layer.w_out.raw_data().begin(), layer.w_out.raw_data().end(), 0.0);
  Rng rng(102);
  Tensor x = random_tensor({2, 5, cfg.d_model}, rng, 1.0, false);
  Tensor out = layer_apply(x, layer, cfg);
  CHECK(bit_equal(out.data(), x.data()));
}

TEST_CASE("causality: perturbing position t only changes outputs at >= t") {
  ModelConfig cfg = tiny_config(3, 8, 2, 11);
  ModelParams p = init_params(cfg);
  Rng rng(103);
  const int64_t seq = 6;
  auto tokens = random_tokens(seq, cfg.vocab_size, rng);
  Tensor base = forward_plain(tokens, 1, seq, p);
  for (int64_t t = 0; t < seq; ++t) {
    auto perturbed = tokens;
    perturbed[static_cast<size_t>(t)] =
        static_cast<int32_t>((perturbed[static_cast<size_t>(t)] + 1) % cfg.vocab_size);
    Tensor out = forward_plain(perturbed, 1, seq, p);
    for (int64_t s = 0; s < seq; ++s) {
      const double diff = max_abs_diff(
          base.data().subspan(static_cast<size_t>(s * cfg.vocab_size),
                              static_cast<size_t>(cfg.vocab_size)),
          out.data().subspan(static_cast<size_t>(s * cfg.vocab_size),
                             static_cast<size_t>(cfg.vocab_size)));
      if (s < t) CHECK(diff == 0.0);
      if (s == t) CHECK(diff > 0.0);  // the token's own logits must move
    }
  }
}

TEST_CASE("non-causal attention lets early positions see later ones") {
  ModelConfig cfg = tiny_config(3, 8, 2, 11);
  ModelParams p = init_params(cfg);
  Rng rng(104);
  Tensor x = random_tensor({1, 4, cfg.d_model}, rng, 1.0, false);
  Tensor y = x.clone();
  auto raw = y.raw_data();
  raw[3 * cfg.d_model] += 0.5;  // last position
  Tensor a = layer_apply(x, p.layers[0], cfg, AttnMask::none);
  Tensor b = layer_apply(y, p.layers[0], cfg, AttnMask::none);
  CHECK(max_abs_diff(a.data().subspan(0, static_cast<size_t>(cfg.d_model)),
                     b.data().subspan(0, static_cast<size_t>(cfg.d_model))) > 0.0);
}

TEST_CASE("layer contribution equals output minus input") {
  ModelConfig cfg = tiny_config();
  ModelParams p = init_params(cfg);
  Rng rng(105);
  Tensor x = random_tensor({2, 4, cfg.d_model}, rng, 1.0, false);
  Tensor contrib;
  Tensor out = layer_apply(x, p.layers[1], cfg, AttnMask::causal, &contrib);
  for (size_t i = 0; i < out.data().size(); ++i)
    CHECK(std::abs(out.data()[i] - x.data()[i] - contrib.data()[i]) < 1e-12);
}

TEST_CASE("forward_plain equals folding layer_apply plus the head") {
  ModelConfig cfg = tiny_config(4, 8, 2, 13);
  ModelParams p = init_params(cfg);
  Rng rng(106);
  auto tokens = random_tokens(2 * 5, cfg.vocab_size, rng);
  Tensor folded = embed_tokens(p, tokens, 2, 5);
  for (const LayerParams& l : p.layers) folded = layer_apply(folded, l, cfg);
  folded = lm_head(folded, p);
  Tensor direct = forward_plain(tokens, 2, 5, p);
  CHECK(max_abs_diff(folded.data(), direct.data()) <= 1e-12);
}

TEST_CASE("token and length validation") {
  ModelConfig cfg = tiny_config();
  ModelParams p = init_params(cfg);
  std::vector<int32_t> bad{0, static_cast<int32_t>(cfg.vocab_size)};
  CHECK_THROWS_AS(forward_plain(bad, 1, 2, p), Error);
  Rng rng(107);
  auto tokens = random_tokens(cfg.max_seq_len + 1, cfg.vocab_size, rng);
  CHECK_THROWS_AS(forward_plain(tokens, 1, cfg.max_seq_len + 1, p), Error);
}

TEST_CASE("capture_residuals: length, embedding start, decomposition, resume") {
  ModelConfig cfg = tiny_config(4, 8, 2, 13);
  ModelParams p = init_params(cfg);
  Rng rng(108);
  const int64_t batch = 2, seq = 5;
  auto tokens = random_tokens(batch * seq, cfg.vocab_size, rng);
  std::vector<Tensor> contributions;
  std::vector<Tensor> states = capture_residuals(tokens, batch, seq, p, &contributions);
  REQUIRE(states.size() == static_cast<size_t>(cfg.n_layers + 1));
  REQUIRE(contributions.size() == static_cast<size_t>(cfg.n_layers));

  Tensor embedded = embed_tokens(p, tokens, batch, seq);
  CHECK(bit_equal(states[0].data(), embedded.data()));

  // final state equals embedding plus the sum of per-layer contributions
  std::vector<double> acc(states[0].data().begin(), states[0].data().end());
  for (const Tensor& c : contributions)
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += c.data()[i];
  CHECK(max_abs_diff(acc, states.back().data()) < 1e-10);

  // consistency: x^{l+1} == layer_apply(x^l)
  for (int64_t l = 0; l < cfg.n_layers; ++l) {
    Tensor next = layer_apply(states[static_cast<size_t>(l)], p.layers[static_cast<size_t>(l)], cfg);
    CHECK(max_abs_diff(next.data(), states[static_cast<size_t>(l + 1)].data()) == 0.0);
  }

  // resuming from a captured state reproduces the logits
  Tensor resumed = states[2];
  for (int64_t l = 2; l < cfg.n_layers; ++l)
    resumed = layer_apply(resumed, p.layers[static_cast<size_t>(l)], cfg);
  resumed = lm_head(resumed, p);
  Tensor direct = forward_plain(tokens, batch, seq, p);
  CHECK(max_abs_diff(resumed.data(), direct.data()) <= 1e-12);
}

TEST_CASE("full toy model gradient matches finite differences") {
  ModelConfig cfg = tiny_config(3, 8, 2, 11);
  ModelParams p = init_params(cfg);
  Rng rng(109);
  const int64_t batch = 2, seq = 4;
  auto tokens = random_tokens(batch * seq, cfg.vocab_size, rng);
  auto targets = random_tokens(batch * seq, cfg.vocab_size, rng);
  std::vector<uint8_t> mask(static_cast<size_t>(batch * seq), 0);
  mask[3] = mask[7] = 1;
  std::vector<Tensor*> leaves = p.all();
  const double err = grad_check(
      [&] { return cross_entropy(forward_plain(tokens, batch, seq, p), targets, mask); }, leaves,
      1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("attention gradient in isolation") {
  Rng rng(110);
  const int64_t b = 1, s = 3, d = 8;
  Tensor q = random_tensor({b, s, d}, rng, 0.7);
  Tensor k = random_tensor({b, s, d}, rng, 0.7);
  Tensor v = random_tensor({b, s, d}, rng, 0.7);
  Tensor w = random_tensor({d}, rng, 1.0, false);
  std::vector<Tensor*> leaves{&q, &k, &v};
  const double err =
      grad_check([&] { return sum(mul(attention(q, k, v, 2, 10000.0), w)); }, leaves, 1e-5);
  CHECK(err < 1e-6);
}
