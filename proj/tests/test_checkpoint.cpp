#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "etdlab/checkpoint.hpp"
#include "etdlab/ioutil.hpp"
#include "testutil.hpp"

using namespace etdlab;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path dir = fs::temp_directory_path() / "etdlab_ckpt_test";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  ModelConfig mc = tiny_config(4, 8, 2, 13);
  ModelParams p = init_params(mc);
  CheckpointMeta meta;
  meta.model = mc;
  meta.etd = EtdConfig{1, 2, 3, 1};
  meta.step = 42;
  meta.rng_state = Rng(9).state();
  const fs::path path = temp_dir() / "roundtrip.ckpt";
  save_checkpoint(path, p, nullptr, meta);

  LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.meta.model == mc);
  REQUIRE(loaded.meta.etd.has_value());
  CHECK(loaded.meta.etd->label() == "1-2*3-1");
  CHECK(loaded.meta.step == 42);
  CHECK(loaded.meta.rng_state == meta.rng_state);
  CHECK_FALSE(loaded.router.has_value());
  auto got = loaded.params.named();
  auto want = p.named();
  for (size_t i = 0; i < want.size(); ++i) {
    CHECK(got[i].first == want[i].first);
    CHECK(bit_equal(got[i].second->data(), want[i].second->data()));
  }
}

TEST_CASE("k=1 partitions are recorded as plain") {
  ModelConfig mc = tiny_config();
  ModelParams p = init_params(mc);
  CheckpointMeta meta;
  meta.model = mc;
  meta.etd = EtdConfig{1, 1, 1, 1};
  const fs::path path = temp_dir() / "k1.ckpt";
  save_checkpoint(path, p, nullptr, meta);
  CHECK_FALSE(load_checkpoint(path).meta.etd.has_value());
}

TEST_CASE("checkpoint size depends on the model, not on k") {
  ModelConfig mc = tiny_config(4, 8, 2, 13);
  ModelParams p = init_params(mc);
  const fs::path a = temp_dir() / "k2.ckpt";
  const fs::path b = temp_dir() / "k5.ckpt";
  CheckpointMeta meta;
  meta.model = mc;
  meta.etd = EtdConfig{1, 2, 2, 1};
  save_checkpoint(a, p, nullptr, meta);
  meta.etd = EtdConfig{1, 2, 5, 1};
  save_checkpoint(b, p, nullptr, meta);
  CHECK(fs::file_size(a) == fs::file_size(b));
}

TEST_CASE("router tensors ride along for adaptive checkpoints") {
  ModelConfig mc = tiny_config();
  ModelParams p = init_params(mc);
  RouterParams router = RouterParams::init(mc.d_model, 3);
  CheckpointMeta meta;
  meta.model = mc;
  ActOptions act;
  act.epsilon = 0.02;
  act.n_max = 7;
  meta.adaptive = act;
  const fs::path path = temp_dir() / "router.ckpt";
  save_checkpoint(path, p, &router, meta);
  LoadedCheckpoint loaded = load_checkpoint(path);
  REQUIRE(loaded.router.has_value());
  CHECK(bit_equal(loaded.router->weight.data(), router.weight.data()));
  CHECK(bit_equal(loaded.router->bias.data(), router.bias.data()));
  REQUIRE(loaded.meta.adaptive.has_value());
  CHECK(loaded.meta.adaptive->epsilon == 0.02);
  CHECK(loaded.meta.adaptive->n_max == 7);
}

TEST_CASE("saving twice produces identical bytes") {
  ModelConfig mc = tiny_config();
  ModelParams p = init_params(mc);
  CheckpointMeta meta;
  meta.model = mc;
  meta.rng_state = Rng(1).state();
  const fs::path a = temp_dir() / "dup_a.ckpt";
  const fs::path b = temp_dir() / "dup_b.ckpt";
  save_checkpoint(a, p, nullptr, meta);
  save_checkpoint(b, p, nullptr, meta);
  CHECK(read_text(a) == read_text(b));
}

TEST_CASE("bad magic and truncation are reported as io errors") {
  const fs::path dir = temp_dir();
  const fs::path bad = dir / "bad.ckpt";
  write_text_atomic(bad, "NOTACKPTxxxxxxxxxxxxxxxx");
  CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("magic"), Error);

  ModelConfig mc = tiny_config();
  ModelParams p = init_params(mc);
  CheckpointMeta meta;
  meta.model = mc;
  const fs::path good = dir / "good.ckpt";
  save_checkpoint(good, p, nullptr, meta);
  std::string bytes = read_text(good);
  write_text_atomic(dir / "trunc.ckpt", bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "trunc.ckpt"), doctest::Contains("truncated"), Error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), Error);
}

TEST_CASE("non-finite tensors are refused at save time") {
  ModelConfig mc = tiny_config();
  ModelParams p = init_params(mc);
  p.embedding.raw_data()[0] = std::numeric_limits<double>::infinity();
  CheckpointMeta meta;
  meta.model = mc;
  CHECK_THROWS_WITH_AS(save_checkpoint(temp_dir() / "inf.ckpt", p, nullptr, meta),
                       doctest::Contains("non-finite"), Error);
}
