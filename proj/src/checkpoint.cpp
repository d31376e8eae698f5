#include "etdlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "etdlab/ioutil.hpp"
#include "json.hpp"

namespace etdlab {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'E', 'T', 'D', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; byte swapping not implemented");

json model_config_to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
              {"n_heads", c.n_heads},       {"d_ff", c.d_ff},
              {"n_layers", c.n_layers},     {"max_seq_len", c.max_seq_len},
              {"norm_eps", c.norm_eps},     {"seed", c.seed},
              {"activation", activation_name(c.activation)},
              {"rope_base", c.rope_base}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int64_t>();
  c.d_model = j.at("d_model").get<int64_t>();
  c.n_heads = j.at("n_heads").get<int64_t>();
  c.d_ff = j.at("d_ff").get<int64_t>();
  c.n_layers = j.at("n_layers").get<int64_t>();
  c.max_seq_len = j.at("max_seq_len").get<int64_t>();
  c.norm_eps = j.at("norm_eps").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  c.activation = activation_from_string(j.at("activation").get<std::string>());
  c.rope_base = j.at("rope_base").get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, ModelParams& params,
                     RouterParams* router, const CheckpointMeta& meta) {
  json header;
  header["format_version"] = 1;
  header["model"] = model_config_to_json(meta.model);
  if (meta.etd.has_value() && meta.etd->iterations > 1) {
    header["etd"] = meta.etd->label();
  } else {
    header["etd"] = nullptr;
  }
  if (meta.adaptive.has_value()) {
    header["adaptive"] = json{{"epsilon", meta.adaptive->epsilon},
                              {"n_max", meta.adaptive->n_max},
                              {"ponder_cost", meta.adaptive->ponder_cost}};
  } else {
    header["adaptive"] = nullptr;
  }
  header["step"] = meta.step;
  header["rng"] = meta.rng_state;

  std::vector<std::pair<std::string, Tensor*>> tensors = params.named();
  if (router != nullptr) {
    tensors.emplace_back("router.weight", &router->weight);
    tensors.emplace_back("router.bias", &router->bias);
  }
  json table = json::array();
  for (auto& [name, t] : tensors) {
    if (!all_finite(t->data()))
      fail(ErrorKind::input, "refusing to save non-finite tensor '" + name + "'");
    table.push_back(json{{"name", name}, {"shape", t->shape()}});
  }
  header["tensors"] = table;

  const std::string hdr = header.dump();
  std::string bytes;
  bytes.reserve(sizeof(kMagic) + 8 + hdr.size());
  bytes.append(kMagic, sizeof(kMagic));
  const uint64_t hlen = hdr.size();
  bytes.append(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  bytes.append(hdr);
  for (auto& [name, t] : tensors) {
    const auto span = t->data();
    bytes.append(reinterpret_cast<const char*>(span.data()), span.size() * sizeof(double));
  }
  write_text_atomic(path, bytes);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    fail(ErrorKind::io, path.string() + " is not a checkpoint (bad magic)");
  uint64_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!is || hlen == 0 || hlen > (1ULL << 30))
    fail(ErrorKind::io, path.string() + ": corrupt header length");
  std::string hdr(hlen, '\0');
  is.read(hdr.data(), static_cast<std::streamsize>(hlen));
  if (!is) fail(ErrorKind::io, path.string() + ": truncated header");

  json header = json::parse(hdr, nullptr, false);
  if (header.is_discarded()) fail(ErrorKind::io, path.string() + ": header is not valid JSON");

  LoadedCheckpoint out;
  out.meta.model = model_config_from_json(header.at("model"));
  out.meta.model.validate();
  if (!header.at("etd").is_null())
    out.meta.etd = EtdConfig::parse(header.at("etd").get<std::string>());
  if (!header.at("adaptive").is_null()) {
    ActOptions a;
    a.epsilon = header["adaptive"].at("epsilon").get<double>();
    a.n_max = header["adaptive"].at("n_max").get<int64_t>();
    a.ponder_cost = header["adaptive"].value("ponder_cost", 0.0);
    out.meta.adaptive = a;
  }
  out.meta.step = header.at("step").get<int64_t>();
  out.meta.rng_state = header.at("rng").get<std::string>();

  // Rebuild parameters with the canonical structure, then fill from the
  // declared tensor table.
  out.params = init_params(out.meta.model);
  std::vector<std::pair<std::string, Tensor*>> want = out.params.named();
  const json& table = header.at("tensors");
  const size_t base_count = want.size();
  bool has_router = table.size() == base_count + 2;
  if (table.size() != base_count && !has_router)
    fail(ErrorKind::io, path.string() + ": tensor table size does not match the model config");
  if (has_router) {
    out.router = RouterParams::init(out.meta.model.d_model, 0);
    want.emplace_back("router.weight", &out.router->weight);
    want.emplace_back("router.bias", &out.router->bias);
  }
  for (size_t i = 0; i < want.size(); ++i) {
    const json& entry = table.at(i);
    if (entry.at("name").get<std::string>() != want[i].first)
      fail(ErrorKind::io, path.string() + ": unexpected tensor '" +
                              entry.at("name").get<std::string>() + "', wanted '" +
                              want[i].first + "'");
    const Shape shape = entry.at("shape").get<Shape>();
    if (shape != want[i].second->shape())
      fail(ErrorKind::io, path.string() + ": tensor '" + want[i].first + "' has shape " +
                              shape_str(shape) + ", expected " +
                              shape_str(want[i].second->shape()));
    auto dst = want[i].second->raw_data();
    is.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(dst.size() * sizeof(double)));
    if (!is) fail(ErrorKind::io, path.string() + ": truncated tensor data at '" + want[i].first + "'");
    if (!all_finite(want[i].second->data()))
      fail(ErrorKind::io, path.string() + ": non-finite values in tensor '" + want[i].first + "'");
  }
  is.peek();
  if (!is.eof()) fail(ErrorKind::io, path.string() + ": trailing bytes after tensor data");
  return out;
}

}  // namespace etdlab
