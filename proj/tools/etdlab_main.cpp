// etdlab: command-line surface over the recursive-depth transformer lab.
// Subcommands: pretrain, profile, select, train-etd, eval, sweep.
// Every command writes a run manifest before doing work, writes declared
// outputs atomically, refuses to overwrite existing outputs without --force,
// and reports failures as one JSON object on stderr with a nonzero exit.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "etdlab/analysis.hpp"
#include "etdlab/checkpoint.hpp"
#include "etdlab/ioutil.hpp"
#include "etdlab/train.hpp"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace etdlab;

constexpr const char* kVersion = "0.1.0";

// ---- config parsing ------------------------------------------------------

ModelConfig model_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.norm_eps = j.value("norm_eps", c.norm_eps);
  c.seed = j.value("seed", c.seed);
  if (j.contains("activation")) c.activation = activation_from_string(j["activation"]);
  c.rope_base = j.value("rope_base", c.rope_base);
  c.validate();
  return c;
}

json model_to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
              {"n_heads", c.n_heads},       {"d_ff", c.d_ff},
              {"n_layers", c.n_layers},     {"max_seq_len", c.max_seq_len},
              {"norm_eps", c.norm_eps},     {"seed", c.seed},
              {"activation", activation_name(c.activation)},
              {"rope_base", c.rope_base}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.validate();
  return c;
}

json train_to_json(const TrainConfig& c) {
  return json{{"steps", c.steps},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"weight_decay", c.weight_decay},
              {"warmup_steps", c.warmup_steps},
              {"clip_norm", c.clip_norm},
              {"seed", c.seed},
              {"eval_interval", c.eval_interval}};
}

TaskSpec task_from_json(const json& j) {
  TaskSpec t;
  if (j.contains("kind")) t.kind = task_kind_from_string(j["kind"]);
  t.depth = j.value("depth", t.depth);
  t.modulus = j.value("modulus", t.modulus);
  t.hops = j.value("hops", t.hops);
  t.domain = j.value("domain", t.domain);
  t.length = j.value("length", t.length);
  t.corpus_path = j.value("corpus_path", t.corpus_path);
  t.seq_len = j.value("seq_len", t.seq_len);
  t.seed = j.value("seed", t.seed);
  t.train_count = j.value("train_count", t.train_count);
  t.test_count = j.value("test_count", t.test_count);
  t.validate();
  return t;
}

json task_to_json(const TaskSpec& t) {
  return json{{"kind", task_kind_name(t.kind)},
              {"depth", t.depth},
              {"modulus", t.modulus},
              {"hops", t.hops},
              {"domain", t.domain},
              {"length", t.length},
              {"corpus_path", t.corpus_path},
              {"seq_len", t.seq_len},
              {"seed", t.seed},
              {"train_count", t.train_count},
              {"test_count", t.test_count}};
}

json load_json_file(const fs::path& path) {
  json j = json::parse(read_text(path), nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::io, path.string() + " is not valid JSON");
  return j;
}

// --task accepts either a path to a JSON file or an inline JSON object.
json resolve_task_json(const std::string& arg) {
  if (!arg.empty() && arg.front() == '{') {
    json j = json::parse(arg, nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::input, "--task inline JSON is malformed");
    return j;
  }
  return load_json_file(arg);
}

// ---- run plumbing --------------------------------------------------------

void check_output(const fs::path& path, bool force) {
  if (fs::exists(path)) {
    if (!force)
      fail(ErrorKind::io, "output " + path.string() + " exists; pass --force to overwrite");
    fs::remove_all(path);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_manifest(const fs::path& path, const std::string& command, const json& config,
                    const json& inputs, const std::vector<std::string>& outputs, uint64_t seed) {
  json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["config"] = config;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["seed"] = seed;
  write_text_atomic(path, m.dump(2) + "\n");
}

uint64_t router_seed_for(uint64_t train_seed) { return train_seed * 0x9e3779b97f4a7c15ULL + 1; }

std::vector<int64_t> parse_int_list(const std::string& s) {
  std::vector<int64_t> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(std::stoll(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::stoll(cur));
  if (out.empty()) fail(ErrorKind::input, "empty integer list '" + s + "'");
  return out;
}

std::vector<uint64_t> parse_seed_list(const std::string& s) {
  std::vector<uint64_t> out;
  for (int64_t v : parse_int_list(s)) out.push_back(static_cast<uint64_t>(v));
  return out;
}

// ---- subcommands ---------------------------------------------------------

struct PretrainArgs {
  std::string config, out, init_from;
  bool force = false;
};

void run_pretrain(const PretrainArgs& a) {
  json cfg = load_json_file(a.config);
  TrainConfig tc = train_from_json(cfg.value("train", json::object()));
  TaskSpec task = task_from_json(cfg.value("task", json::object()));

  ModelParams params;
  int64_t prior_steps = 0;
  if (!a.init_from.empty()) {
    LoadedCheckpoint loaded = load_checkpoint(a.init_from);
    params = std::move(loaded.params);
    prior_steps = loaded.meta.step;
  } else {
    params = init_params(model_from_json(cfg.value("model", json::object())));
  }

  const fs::path out = a.out;
  const fs::path manifest = out.string() + ".manifest.json";
  const fs::path log_path = out.string() + ".log.jsonl";
  check_output(out, a.force);
  check_output(manifest, a.force);
  check_output(log_path, a.force);
  json resolved{{"model", model_to_json(params.config)},
                {"train", train_to_json(tc)},
                {"task", task_to_json(task)}};
  write_manifest(manifest, "pretrain", resolved,
                 json{{"init_from", a.init_from}, {"config", a.config}},
                 {out.string(), log_path.string()}, tc.seed);

  TaskData data = make_task(task);
  std::ofstream log(log_path, std::ios::trunc);
  TrainResult tr = train(params, nullptr, DepthMode::plain(), data.train, tc, &log);

  CheckpointMeta meta;
  meta.model = params.config;
  meta.step = prior_steps + tr.steps;
  meta.rng_state = tr.rng_state;
  save_checkpoint(out, params, nullptr, meta);
  std::cout << json{{"checkpoint", out.string()}, {"steps", meta.step},
                    {"final_loss", tr.final_loss}}
                   .dump()
            << "\n";
}

struct ProfileArgs {
  std::string ckpt, corpus, out;
  int gap = 1;
  int64_t seq_len = 32;
  int64_t samples = 512;
  int64_t batch = 32;
  bool force = false;
};

void run_profile(const ProfileArgs& a) {
  const fs::path json_out = a.out + std::string(".json");
  const fs::path csv_out = a.out + std::string(".csv");
  const fs::path manifest = a.out + std::string(".manifest.json");
  check_output(json_out, a.force);
  check_output(csv_out, a.force);
  check_output(manifest, a.force);
  json resolved{{"gap", a.gap}, {"seq_len", a.seq_len}, {"samples", a.samples}};
  write_manifest(manifest, "profile", resolved,
                 json{{"ckpt", a.ckpt}, {"corpus", a.corpus}},
                 {json_out.string(), csv_out.string()}, 0);

  LoadedCheckpoint loaded = load_checkpoint(a.ckpt);
  std::vector<std::vector<int32_t>> corpus = load_corpus(a.corpus, a.seq_len);
  if (static_cast<int64_t>(corpus.size()) > a.samples)
    corpus.resize(static_cast<size_t>(a.samples));
  AngularProfile profile =
      profile_model(loaded.params, corpus, a.gap, a.batch, fs::path(a.corpus).filename().string());
  write_profile_json(json_out, profile);
  write_profile_csv(csv_out, profile);
  std::cout << json{{"profile", json_out.string()}, {"sequences", profile.sample_count}}.dump()
            << "\n";
}

struct SelectArgs {
  std::string profile, out;
  double sensitivity = 1.0;
  int64_t k = 0;  // 0: leave symbolic
  bool no_smooth = false;
  bool force = false;
};

void run_select(const SelectArgs& a) {
  AngularProfile profile = load_profile(a.profile);
  SelectionResult sel = select_config(profile, a.sensitivity, !a.no_smooth);
  std::optional<int64_t> k;
  if (a.k > 0) k = a.k;
  const std::string label = k.has_value() ? sel.partition(*k).label() : sel.partition().label_template();
  if (!a.out.empty()) {
    const fs::path manifest = a.out + std::string(".manifest.json");
    check_output(a.out, a.force);
    check_output(manifest, a.force);
    write_manifest(manifest, "select",
                   json{{"sensitivity", a.sensitivity}, {"smooth", !a.no_smooth}},
                   json{{"profile", a.profile}}, {a.out}, 0);
    write_text_atomic(a.out, selection_to_json(profile, sel, k) + "\n");
  }
  std::cout << label << "\n";
}

struct TrainEtdArgs {
  std::string ckpt, config, etd, out, task_override;
  bool adaptive = false;
  double epsilon = 0.01;
  int64_t nmax = 10;
  double ponder = 0.0;
  bool force = false;
};

void run_train_etd(const TrainEtdArgs& a) {
  json cfg = load_json_file(a.config);
  TrainConfig tc = train_from_json(cfg.value("train", json::object()));
  TaskSpec task = task_from_json(a.task_override.empty() ? cfg.value("task", json::object())
                                                         : resolve_task_json(a.task_override));

  LoadedCheckpoint loaded = load_checkpoint(a.ckpt);
  ModelParams params = std::move(loaded.params);

  if (a.etd.empty()) fail(ErrorKind::config, "train-etd requires --etd \"NE-NT*k-ND\"");
  DepthMode mode;
  std::optional<RouterParams> router;
  if (a.adaptive) {
    auto [partition, k_given] = EtdConfig::parse_allow_template(a.etd);
    (void)k_given;  // dynamic depth ignores k
    ActOptions act{a.epsilon, a.nmax, a.ponder};
    mode = DepthMode::adaptive(partition, act);
    router = loaded.router.has_value()
                 ? std::move(loaded.router)
                 : std::optional<RouterParams>(
                       RouterParams::init(params.config.d_model, router_seed_for(tc.seed)));
  } else {
    mode = DepthMode::fixed(EtdConfig::parse(a.etd));
  }
  mode.etd.validate_for(params.config.n_layers);

  const fs::path out = a.out;
  const fs::path manifest = out.string() + ".manifest.json";
  const fs::path log_path = out.string() + ".log.jsonl";
  check_output(out, a.force);
  check_output(manifest, a.force);
  check_output(log_path, a.force);
  json resolved{{"model", model_to_json(params.config)},
                {"train", train_to_json(tc)},
                {"task", task_to_json(task)},
                {"depth", mode.label()}};
  if (a.adaptive)
    resolved["adaptive"] =
        json{{"epsilon", a.epsilon}, {"nmax", a.nmax}, {"ponder_cost", a.ponder}};
  write_manifest(manifest, "train-etd", resolved,
                 json{{"ckpt", a.ckpt}, {"config", a.config}},
                 {out.string(), log_path.string()}, tc.seed);

  TaskData data = make_task(task);
  std::ofstream log(log_path, std::ios::trunc);
  TrainResult tr = train(params, router ? &*router : nullptr, mode, data.train, tc, &log);

  CheckpointMeta meta;
  meta.model = params.config;
  meta.step = loaded.meta.step + tr.steps;
  meta.rng_state = tr.rng_state;
  if (!a.adaptive) meta.etd = mode.etd;
  if (a.adaptive) meta.adaptive = mode.act;
  save_checkpoint(out, params, router ? &*router : nullptr, meta);
  std::cout << json{{"checkpoint", out.string()}, {"depth", mode.label()},
                    {"final_loss", tr.final_loss}}
                   .dump()
            << "\n";
}

struct EvalArgs {
  std::string ckpt, config, task_override, out, etd, baseline, predictions;
  int64_t k = 0;
  bool plain = false;
  bool adaptive = false;
  double epsilon = 0.01;
  int64_t nmax = 10;
  int64_t batch = 64;
  bool force = false;
};

void run_eval(const EvalArgs& a) {
  const fs::path out = a.out;
  const fs::path manifest = out.string() + ".manifest.json";
  check_output(out, a.force);
  check_output(manifest, a.force);

  if (!a.predictions.empty()) {
    // Fixture mode: score stored predictions against targets/masks.
    write_manifest(manifest, "eval",
                   json{{"mode", "predictions"}},
                   json{{"predictions", a.predictions}}, {out.string()}, 0);
    std::ifstream is(a.predictions);
    if (!is) fail(ErrorKind::io, "cannot open " + a.predictions);
    int64_t n = 0, correct = 0;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) fail(ErrorKind::io, "bad JSONL line in " + a.predictions);
      const auto target = j.at("target").get<std::vector<int32_t>>();
      const auto mask = j.at("mask").get<std::vector<uint8_t>>();
      const auto pred = j.at("prediction").get<std::vector<int32_t>>();
      if (target.size() != mask.size() || pred.size() != target.size())
        fail(ErrorKind::input, "prediction fixture arrays disagree in length");
      bool ok = true;
      for (size_t i = 0; i < mask.size(); ++i)
        if (mask[i] && pred[i] != target[i]) ok = false;
      correct += ok;
      ++n;
    }
    if (n == 0) fail(ErrorKind::input, "prediction fixture is empty");
    EvalReport rep;
    rep.task = "predictions:" + fs::path(a.predictions).filename().string();
    rep.depth_label = "external";
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    rep.n_examples = n;
    write_report(out, rep);
    std::cout << json{{"accuracy", rep.accuracy}, {"n", n}}.dump() << "\n";
    return;
  }

  if (a.config.empty() && a.task_override.empty())
    fail(ErrorKind::config, "eval needs --config or --task");
  json cfg = a.config.empty() ? json::object() : load_json_file(a.config);
  TaskSpec task = task_from_json(a.task_override.empty() ? cfg.value("task", json::object())
                                                         : resolve_task_json(a.task_override));

  LoadedCheckpoint loaded = load_checkpoint(a.ckpt);
  DepthMode mode;
  if (a.plain) {
    mode = DepthMode::plain();
  } else if (a.adaptive || (!a.etd.empty() && loaded.meta.adaptive.has_value() && a.etd.empty())) {
    fail(ErrorKind::config, "adaptive eval needs --etd with the partition");
  } else if (!a.etd.empty()) {
    auto [partition, k_given] = EtdConfig::parse_allow_template(a.etd);
    if (loaded.meta.adaptive.has_value() && loaded.router.has_value()) {
      ActOptions act = *loaded.meta.adaptive;
      mode = DepthMode::adaptive(partition, act);
    } else {
      EtdConfig fixed = partition;
      if (a.k > 0) fixed.iterations = a.k;
      else if (!k_given)
        fail(ErrorKind::config, "--etd has symbolic k; pass --k or a numeric label");
      mode = DepthMode::fixed(fixed);
    }
  } else if (loaded.meta.etd.has_value()) {
    EtdConfig fixed = *loaded.meta.etd;
    if (a.k > 0) fixed.iterations = a.k;
    mode = DepthMode::fixed(fixed);
  } else {
    mode = DepthMode::plain();
  }

  json resolved{{"task", task_to_json(task)}, {"depth", mode.label()}, {"batch", a.batch}};
  write_manifest(manifest, "eval", resolved,
                 json{{"ckpt", a.ckpt}, {"baseline", a.baseline}}, {out.string()},
                 task.seed);

  TaskData data = make_task(task);
  EvalReport rep = evaluate(loaded.params, loaded.router ? &*loaded.router : nullptr, mode,
                            data.test, a.batch, task.seed);
  if (!a.baseline.empty()) attach_baseline(rep, load_report(a.baseline).accuracy);
  write_report(out, rep);
  std::cout << json{{"accuracy", rep.accuracy},
                    {"loss", rep.loss},
                    {"depth", rep.depth_label},
                    {"flops_layers", rep.flops_layers}}
                   .dump()
            << "\n";
}

struct SweepArgs {
  std::string mode, config, ckpt, out_dir, etd, ks = "1,2,3", seeds = "1,2,3", ne_values;
  int64_t nt = 0, k = 0, budget = 0;
  double epsilon = 0.01, ponder = 0.0;
  int64_t nmax = 10;
  int64_t eval_batch = 64;
  bool force = false;
};

void run_sweep(const SweepArgs& a) {
  json cfg = load_json_file(a.config);
  TrainConfig tc = train_from_json(cfg.value("train", json::object()));
  TaskSpec task = task_from_json(cfg.value("task", json::object()));

  const fs::path dir = a.out_dir;
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest) && !a.force)
    fail(ErrorKind::io, "sweep output " + dir.string() + " exists; pass --force to overwrite");
  fs::create_directories(dir);

  LoadedCheckpoint loaded = load_checkpoint(a.ckpt);
  const std::vector<uint64_t> seeds = parse_seed_list(a.seeds);

  json resolved{{"mode", a.mode},
                {"train", train_to_json(tc)},
                {"task", task_to_json(task)},
                {"seeds", seeds}};
  write_manifest(manifest, "sweep", resolved, json{{"ckpt", a.ckpt}, {"config", a.config}},
                 {(dir / "cells.csv").string(), (dir / "summary.csv").string()}, tc.seed);

  TaskData data = make_task(task);
  SweepOptions opt;
  opt.train = tc;
  opt.eval_batch = a.eval_batch;
  opt.out_dir = dir / "cells";

  std::vector<SweepCell> cells;
  if (a.mode == "k") {
    if (a.etd.empty()) fail(ErrorKind::config, "sweep --mode k needs --etd \"NE-NT*k-ND\"");
    auto [partition, k_given] = EtdConfig::parse_allow_template(a.etd);
    (void)k_given;
    const std::vector<int64_t> ks = parse_int_list(a.ks);
    cells = sweep_k(loaded.params, partition, ks, seeds, data, opt);
  } else if (a.mode == "encoder") {
    if (a.nt <= 0 || a.k <= 0 || a.ne_values.empty())
      fail(ErrorKind::config, "sweep --mode encoder needs --nt, --k and --ne-values");
    const std::vector<int64_t> nes = parse_int_list(a.ne_values);
    cells = sweep_encoder_position(loaded.params, a.nt, a.k, nes, seeds, data, opt);
  } else if (a.mode == "baselines") {
    if (a.etd.empty() || a.budget <= 0)
      fail(ErrorKind::config, "sweep --mode baselines needs --etd (selected shape) and --budget");
    auto [partition, k_given] = EtdConfig::parse_allow_template(a.etd);
    (void)k_given;
    cells = compare_baseline_shapes(loaded.params, partition, a.budget, seeds, data, opt);
  } else if (a.mode == "adaptive") {
    if (a.etd.empty()) fail(ErrorKind::config, "sweep --mode adaptive needs --etd");
    auto [partition, k_given] = EtdConfig::parse_allow_template(a.etd);
    (void)k_given;
    ActOptions act{a.epsilon, a.nmax, a.ponder};
    cells = sweep_adaptive(loaded.params, partition, act, seeds, data, opt);
  } else {
    fail(ErrorKind::config, "unknown sweep mode '" + a.mode + "' (k|encoder|baselines|adaptive)");
  }

  write_sweep_csv(dir / "cells.csv", cells);
  const std::vector<LabelSummary> summary = summarize_cells(cells);
  write_summary_csv(dir / "summary.csv", summary);
  for (const LabelSummary& s : summary) {
    std::cout << json{{"label", s.label},
                      {"params_layers", s.params_layers},
                      {"flops_layers", s.flops_layers},
                      {"mean_accuracy", s.mean_accuracy},
                      {"stdev_accuracy", s.stdev_accuracy},
                      {"n_seeds", s.n_seeds}}
                     .dump()
              << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale recursive-depth transformer lab"};
  app.require_subcommand(1);

  PretrainArgs pre;
  CLI::App* c_pre = app.add_subcommand("pretrain", "train the plain stack from scratch");
  c_pre->add_option("--config", pre.config, "JSON config with model/train/task")->required();
  c_pre->add_option("--out", pre.out, "output checkpoint path")->required();
  c_pre->add_option("--init-from", pre.init_from, "continue from an existing checkpoint");
  c_pre->add_flag("--force", pre.force, "overwrite existing outputs");

  ProfileArgs prof;
  CLI::App* c_prof = app.add_subcommand("profile", "measure per-layer angular distances");
  c_prof->add_option("--ckpt", prof.ckpt)->required();
  c_prof->add_option("--corpus", prof.corpus, "plain-text profiling corpus")->required();
  c_prof->add_option("--gap", prof.gap, "layer offset n in d(l, l+n)");
  c_prof->add_option("--out", prof.out, "output prefix (.json/.csv appended)")->required();
  c_prof->add_option("--seq-len", prof.seq_len);
  c_prof->add_option("--samples", prof.samples, "max corpus windows");
  c_prof->add_option("--batch", prof.batch);
  c_prof->add_flag("--force", prof.force);

  SelectArgs sel;
  CLI::App* c_sel = app.add_subcommand("select", "pick the partition from a profile");
  c_sel->add_option("--profile", sel.profile, "profile JSON from `profile`")->required();
  c_sel->add_option("--sensitivity", sel.sensitivity);
  c_sel->add_option("--k", sel.k, "iteration count to embed in the label");
  c_sel->add_flag("--no-smooth", sel.no_smooth, "skip the quadratic fit");
  c_sel->add_option("--out", sel.out, "selection report JSON");
  c_sel->add_flag("--force", sel.force);

  TrainEtdArgs tet;
  CLI::App* c_tet = app.add_subcommand("train-etd", "continue training with recursion enabled");
  c_tet->add_option("--ckpt", tet.ckpt, "base checkpoint")->required();
  c_tet->add_option("--config", tet.config, "JSON config with train/task")->required();
  c_tet->add_option("--etd", tet.etd, "partition label, e.g. 7-4*3-5");
  c_tet->add_option("--task", tet.task_override, "task JSON (inline or path) overriding config");
  c_tet->add_flag("--adaptive", tet.adaptive, "per-token adaptive depth");
  c_tet->add_option("--epsilon", tet.epsilon, "halting threshold slack");
  c_tet->add_option("--nmax", tet.nmax, "iteration cap");
  c_tet->add_option("--ponder", tet.ponder, "halting regularizer weight (0 = off)");
  c_tet->add_option("--out", tet.out)->required();
  c_tet->add_flag("--force", tet.force);

  EvalArgs ev;
  CLI::App* c_ev = app.add_subcommand("eval", "evaluate a checkpoint on a task");
  c_ev->add_option("--ckpt", ev.ckpt);
  c_ev->add_option("--config", ev.config, "JSON config with task");
  c_ev->add_option("--task", ev.task_override, "task JSON (inline or path)");
  c_ev->add_option("--out", ev.out)->required();
  c_ev->add_option("--etd", ev.etd, "partition override");
  c_ev->add_option("--k", ev.k, "iteration override");
  c_ev->add_flag("--plain", ev.plain, "force the plain stack");
  c_ev->add_option("--baseline", ev.baseline, "report JSON for relative improvement");
  c_ev->add_option("--predictions", ev.predictions, "score a predictions fixture instead");
  c_ev->add_option("--batch", ev.batch);
  c_ev->add_flag("--force", ev.force);

  SweepArgs sw;
  CLI::App* c_sw = app.add_subcommand("sweep", "k / encoder / baselines / adaptive experiment grids");
  c_sw->add_option("--mode", sw.mode, "k|encoder|baselines|adaptive")->required();
  c_sw->add_option("--config", sw.config)->required();
  c_sw->add_option("--ckpt", sw.ckpt, "base checkpoint")->required();
  c_sw->add_option("--out-dir", sw.out_dir)->required();
  c_sw->add_option("--etd", sw.etd, "partition label or template");
  c_sw->add_option("--ks", sw.ks, "comma-separated iteration counts");
  c_sw->add_option("--seeds", sw.seeds, "comma-separated seeds");
  c_sw->add_option("--ne-values", sw.ne_values, "comma-separated encoder sizes");
  c_sw->add_option("--nt", sw.nt, "think-block size (encoder mode)");
  c_sw->add_option("--k", sw.k, "iteration count (encoder mode)");
  c_sw->add_option("--budget", sw.budget, "FLOPs-layer budget (baselines mode)");
  c_sw->add_option("--epsilon", sw.epsilon);
  c_sw->add_option("--nmax", sw.nmax);
  c_sw->add_option("--ponder", sw.ponder);
  c_sw->add_option("--eval-batch", sw.eval_batch);
  c_sw->add_flag("--force", sw.force);

  try {
    app.parse(argc, argv);
    if (c_pre->parsed()) run_pretrain(pre);
    if (c_prof->parsed()) run_profile(prof);
    if (c_sel->parsed()) run_select(sel);
    if (c_tet->parsed()) run_train_etd(tet);
    if (c_ev->parsed()) run_eval(ev);
    if (c_sw->parsed()) run_sweep(sw);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    json err{{"error",
              {{"kind", error_kind_name(e.kind())}, {"message", e.what()}}}};
    if (!e.detail().empty()) err["error"]["detail"] = json::parse(e.detail(), nullptr, false);
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
  return 0;
}
