#include "etdlab/train.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "etdlab/checkpoint.hpp"
#include "etdlab/ioutil.hpp"
#include "json.hpp"

namespace etdlab {

namespace {

using nlohmann::json;

std::string sanitize_label(std::string s) {
  for (char& c : s)
    if (c == '*') c = 'x';
  return s;
}

int resolve_threads(int requested, size_t jobs) {
  int t = requested;
  if (t <= 0) {
    if (const char* env = std::getenv("ETD_LAB_THREADS")) t = std::atoi(env);
  }
  if (t <= 0) t = static_cast<int>(std::thread::hardware_concurrency());
  if (t < 1) t = 1;
  return static_cast<int>(std::min<size_t>(static_cast<size_t>(t), jobs));
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 0) fail(ErrorKind::config, "steps must be >= 0");
  if (batch_size < 1) fail(ErrorKind::config, "batch_size must be >= 1");
  if (!(lr > 0.0)) fail(ErrorKind::config, "lr must be > 0");
  if (!(clip_norm > 0.0)) fail(ErrorKind::config, "clip_norm must be > 0");
  if (warmup_steps < 0) fail(ErrorKind::config, "warmup_steps must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    fail(ErrorKind::config, "betas must lie in [0, 1)");
  if (weight_decay < 0.0) fail(ErrorKind::config, "weight_decay must be >= 0");
}

DepthMode DepthMode::plain() { return DepthMode{}; }

DepthMode DepthMode::fixed(EtdConfig cfg) {
  cfg.validate();
  return DepthMode{DepthModeKind::fixed, cfg, {}};
}

DepthMode DepthMode::adaptive(EtdConfig partition, ActOptions options) {
  partition.validate();
  options.validate();
  return DepthMode{DepthModeKind::adaptive, partition, options};
}

std::string DepthMode::label() const {
  switch (kind) {
    case DepthModeKind::plain: return "plain";
    case DepthModeKind::fixed: return etd.label();
    case DepthModeKind::adaptive:
      return "adaptive-" + std::to_string(etd.n_encoder) + "-" + std::to_string(etd.n_think) +
             "-" + std::to_string(etd.n_decoder);
  }
  return "unknown";
}

TrainResult train(ModelParams& params, RouterParams* router, const DepthMode& mode,
                  const Dataset& trainset, const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  if (mode.kind != DepthModeKind::plain) mode.etd.validate_for(params.config.n_layers);
  if (mode.kind == DepthModeKind::adaptive && router == nullptr)
    fail(ErrorKind::usage, "adaptive training needs router parameters");
  if (trainset.size() == 0) fail(ErrorKind::input, "training set is empty");

  std::vector<Tensor*> plist = params.all();
  if (mode.kind == DepthModeKind::adaptive) {
    for (Tensor* t : router->all()) plist.push_back(t);
  }
  AdamWState state = AdamWState::init(plist);
  AdamWConfig acfg;
  acfg.beta1 = cfg.beta1;
  acfg.beta2 = cfg.beta2;
  acfg.weight_decay = cfg.weight_decay;

  Rng data_rng(cfg.seed);
  TrainResult res;
  double window_sum = 0.0;
  int64_t window_n = 0;

  for (int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<int64_t> idx(static_cast<size_t>(cfg.batch_size));
    for (int64_t& i : idx) i = data_rng.index(trainset.size());
    ExampleBatch batch = assemble_batch(trainset, idx);

    const double lr_t =
        cfg.warmup_steps > 0
            ? cfg.lr * std::min(1.0, static_cast<double>(step + 1) /
                                         static_cast<double>(cfg.warmup_steps))
            : cfg.lr;
    acfg.lr = lr_t;

    double loss_val = 0.0;
    double grad_norm = 0.0;
    try {
      Tape tape;
      Tensor loss;
      switch (mode.kind) {
        case DepthModeKind::plain: {
          Tensor logits = forward_plain(batch.input, batch.batch, batch.seq, params);
          loss = cross_entropy(logits, batch.target, batch.mask);
          break;
        }
        case DepthModeKind::fixed: {
          Tensor logits = forward_etd(batch.input, batch.batch, batch.seq, params, mode.etd);
          loss = cross_entropy(logits, batch.target, batch.mask);
          break;
        }
        case DepthModeKind::adaptive: {
          ActForwardResult fwd = act_forward(batch.input, batch.batch, batch.seq, params,
                                             mode.etd, *router, mode.act, batch.valid);
          loss = cross_entropy(fwd.logits, batch.target, batch.mask);
          if (mode.act.ponder_cost > 0.0)
            loss = add(loss, scale(fwd.ponder, mode.act.ponder_cost));
          break;
        }
      }
      loss_val = loss.item();
      if (!std::isfinite(loss_val)) fail(ErrorKind::diverged, "non-finite loss");
      tape.backward(loss);
      grad_norm = clip_global_norm(plist, cfg.clip_norm);
      adamw_step(plist, state, acfg);
      zero_grad(plist);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::diverged)
        fail(ErrorKind::diverged, "training diverged at step " + std::to_string(step) + ": " +
                                      e.what());
      throw;
    }

    res.final_loss = loss_val;
    if (log != nullptr) {
      json line{{"step", step}, {"loss", loss_val}, {"lr", lr_t}, {"grad_norm", grad_norm}};
      (*log) << line.dump() << '\n';
    }
    window_sum += loss_val;
    window_n += 1;
    if (cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0) {
      if (log != nullptr) {
        json line{{"step", step},
                  {"event", "loss_window"},
                  {"mean_loss", window_sum / static_cast<double>(window_n)}};
        (*log) << line.dump() << '\n';
      }
      window_sum = 0.0;
      window_n = 0;
    }
  }
  res.steps = cfg.steps;
  res.rng_state = data_rng.state();
  return res;
}

std::string task_label(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::mod_chain:
      return "mod_chain(depth=" + std::to_string(spec.depth) + ",p=" +
             std::to_string(spec.modulus) + ")";
    case TaskKind::k_hop:
      return "k_hop(h=" + std::to_string(spec.hops) + ",domain=" + std::to_string(spec.domain) +
             ")";
    case TaskKind::copy_reverse:
      return "copy_reverse(len=" + std::to_string(spec.length) + ")";
    case TaskKind::lm_corpus: return "lm_corpus";
  }
  return "unknown";
}

EvalReport evaluate(const ModelParams& params, const RouterParams* router, const DepthMode& mode,
                    const Dataset& testset, int64_t batch_size, uint64_t seed) {
  if (testset.size() == 0) fail(ErrorKind::input, "evaluation set is empty");
  if (mode.kind != DepthModeKind::plain) mode.etd.validate_for(params.config.n_layers);
  if (mode.kind == DepthModeKind::adaptive && router == nullptr)
    fail(ErrorKind::usage, "adaptive evaluation needs router parameters");

  const int64_t v = params.config.vocab_size;
  int64_t correct = 0;
  double nll_sum = 0.0;
  int64_t mask_total = 0;
  // Adaptive aggregation across batches.
  int64_t act_tokens = 0, act_steps = 0, act_threshold = 0;
  std::vector<int64_t> act_hist;

  const int64_t n = testset.size();
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t b = std::min(batch_size, n - start);
    std::vector<int64_t> idx(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) idx[static_cast<size_t>(i)] = start + i;
    ExampleBatch batch = assemble_batch(testset, idx);

    Tensor logits;
    if (mode.kind == DepthModeKind::plain) {
      logits = forward_plain(batch.input, batch.batch, batch.seq, params);
    } else if (mode.kind == DepthModeKind::fixed) {
      logits = forward_etd(batch.input, batch.batch, batch.seq, params, mode.etd);
    } else {
      ActForwardResult fwd = act_forward(batch.input, batch.batch, batch.seq, params, mode.etd,
                                         *router, mode.act, batch.valid);
      logits = fwd.logits;
      ActStats stats = act_stats(fwd.state);
      if (act_hist.empty()) act_hist.assign(stats.histogram.size(), 0);
      for (size_t i = 0; i < stats.histogram.size(); ++i) act_hist[i] += stats.histogram[i];
      act_tokens += stats.tokens;
      for (size_t i = 0; i < fwd.state.steps_used.size(); ++i) {
        if (!fwd.state.valid[i]) continue;
        act_steps += fwd.state.steps_used[i];
        act_threshold += fwd.state.halted_by_threshold[i] != 0;
      }
    }

    // accuracy: every supervised position must match
    for (int64_t e = 0; e < b; ++e) {
      bool ok = true;
      for (int64_t p = 0; p < batch.seq && ok; ++p) {
        const size_t flat = static_cast<size_t>(e * batch.seq + p);
        if (!batch.mask[flat]) continue;
        const double* row = logits.data().data() + static_cast<int64_t>(flat) * v;
        int32_t arg = 0;
        for (int64_t c = 1; c < v; ++c)
          if (row[c] > row[arg]) arg = static_cast<int32_t>(c);
        ok = arg == batch.target[flat];
      }
      correct += ok;
    }
    int64_t batch_mask = 0;
    for (uint8_t m : batch.mask) batch_mask += m != 0;
    Tensor loss = cross_entropy(logits, batch.target, batch.mask);
    nll_sum += loss.item() * static_cast<double>(batch_mask);
    mask_total += batch_mask;
  }

  EvalReport rep;
  rep.task = task_label(testset.spec);
  rep.depth_label = mode.label();
  rep.seed = seed;
  rep.n_examples = n;
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  rep.loss = nll_sum / static_cast<double>(std::max<int64_t>(1, mask_total));
  switch (mode.kind) {
    case DepthModeKind::plain:
      rep.params_layers = params.config.n_layers;
      rep.flops_layers = params.config.n_layers;
      break;
    case DepthModeKind::fixed:
      rep.params_layers = param_layer_count(mode.etd);
      rep.flops_layers = flops_layer_count(mode.etd);
      break;
    case DepthModeKind::adaptive: {
      rep.params_layers = param_layer_count(mode.etd);
      rep.flops_layers = 0;  // per-token dynamic; see adaptive.mean_steps
      AdaptiveSummary s;
      s.histogram = act_hist;
      s.tokens = act_tokens;
      s.mean_steps = act_tokens > 0
                         ? static_cast<double>(act_steps) / static_cast<double>(act_tokens)
                         : 0.0;
      s.frac_threshold =
          act_tokens > 0 ? static_cast<double>(act_threshold) / static_cast<double>(act_tokens)
                         : 0.0;
      s.frac_cap = act_tokens > 0 ? 1.0 - s.frac_threshold : 0.0;
      rep.adaptive = std::move(s);
      break;
    }
  }
  return rep;
}

double exact_match_accuracy(const Dataset& dataset, std::span<const int32_t> predictions) {
  const int64_t n = dataset.size();
  if (n == 0) fail(ErrorKind::input, "empty dataset");
  if (static_cast<int64_t>(predictions.size()) != n * dataset.seq_len)
    fail(ErrorKind::dimension, "predictions length must be n_examples * seq_len");
  int64_t correct = 0;
  for (int64_t e = 0; e < n; ++e) {
    const Example& ex = dataset.examples[static_cast<size_t>(e)];
    bool ok = true;
    for (int64_t p = 0; p < dataset.seq_len && ok; ++p) {
      if (!ex.mask[static_cast<size_t>(p)]) continue;
      ok = predictions[static_cast<size_t>(e * dataset.seq_len + p)] ==
           ex.target[static_cast<size_t>(p)];
    }
    correct += ok;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

void attach_baseline(EvalReport& report, double baseline_accuracy) {
  if (!(baseline_accuracy > 0.0))
    fail(ErrorKind::input, "baseline accuracy must be > 0 for a relative improvement");
  report.baseline_accuracy = baseline_accuracy;
  report.delta_pct = 100.0 * (report.accuracy - baseline_accuracy) / baseline_accuracy;
}

std::string report_to_json(const EvalReport& r) {
  json j;
  j["task"] = r.task;
  j["depth"] = r.depth_label;
  j["params_layers"] = r.params_layers;
  j["flops_layers"] = r.flops_layers;
  j["accuracy"] = r.accuracy;
  j["loss"] = r.loss;
  j["n_examples"] = r.n_examples;
  j["seed"] = r.seed;
  j["aggregation"] = r.aggregation;
  if (r.adaptive.has_value()) {
    j["adaptive"] = json{{"mean_steps", r.adaptive->mean_steps},
                         {"histogram", r.adaptive->histogram},
                         {"frac_threshold", r.adaptive->frac_threshold},
                         {"frac_cap", r.adaptive->frac_cap},
                         {"tokens", r.adaptive->tokens}};
  } else {
    j["adaptive"] = nullptr;
  }
  j["baseline_accuracy"] =
      r.baseline_accuracy.has_value() ? json(*r.baseline_accuracy) : json(nullptr);
  j["delta_pct"] = r.delta_pct.has_value() ? json(*r.delta_pct) : json(nullptr);
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::io, "report is not valid JSON");
  EvalReport r;
  r.task = j.at("task").get<std::string>();
  r.depth_label = j.at("depth").get<std::string>();
  r.params_layers = j.at("params_layers").get<int64_t>();
  r.flops_layers = j.at("flops_layers").get<int64_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.loss = j.at("loss").get<double>();
  r.n_examples = j.at("n_examples").get<int64_t>();
  r.seed = j.at("seed").get<uint64_t>();
  r.aggregation = j.value("aggregation", std::string("macro"));
  if (!j.at("adaptive").is_null()) {
    AdaptiveSummary s;
    s.mean_steps = j["adaptive"].at("mean_steps").get<double>();
    s.histogram = j["adaptive"].at("histogram").get<std::vector<int64_t>>();
    s.frac_threshold = j["adaptive"].at("frac_threshold").get<double>();
    s.frac_cap = j["adaptive"].at("frac_cap").get<double>();
    s.tokens = j["adaptive"].at("tokens").get<int64_t>();
    r.adaptive = std::move(s);
  }
  if (!j.at("baseline_accuracy").is_null())
    r.baseline_accuracy = j.at("baseline_accuracy").get<double>();
  if (!j.at("delta_pct").is_null()) r.delta_pct = j.at("delta_pct").get<double>();
  return r;
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  write_text_atomic(path, report_to_json(report) + "\n");
}

EvalReport load_report(const std::filesystem::path& path) {
  return report_from_json(read_text(path));
}

// ---- sweeps -------------------------------------------------------------

namespace {

struct CellJob {
  std::string label;
  uint64_t seed = 0;
  DepthMode mode;
};

std::vector<SweepCell> run_cells(const ModelParams& base, const std::vector<CellJob>& jobs,
                                 const TaskData& task, const SweepOptions& options) {
  namespace fs = std::filesystem;
  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);
  std::vector<SweepCell> out(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<size_t> next{0};

  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        const CellJob& job = jobs[i];
        ModelParams p = base.clone();
        std::optional<RouterParams> router;
        if (job.mode.kind == DepthModeKind::adaptive)
          router = RouterParams::init(p.config.d_model, job.seed * 0x9e3779b97f4a7c15ULL + 1);
        TrainConfig tc = options.train;
        tc.seed = job.seed;

        fs::path cell_dir;
        std::ofstream log;
        if (!options.out_dir.empty()) {
          cell_dir = options.out_dir /
                     (sanitize_label(job.label) + "_s" + std::to_string(job.seed));
          fs::create_directories(cell_dir);
          log.open(cell_dir / "train_log.jsonl", std::ios::trunc);
        }
        TrainResult tr = train(p, router ? &*router : nullptr, job.mode, task.train, tc,
                               log.is_open() ? &log : nullptr);
        EvalReport rep = evaluate(p, router ? &*router : nullptr, job.mode, task.test,
                                  options.eval_batch, job.seed);
        if (!cell_dir.empty()) {
          CheckpointMeta meta;
          meta.model = p.config;
          if (job.mode.kind == DepthModeKind::fixed) meta.etd = job.mode.etd;
          if (job.mode.kind == DepthModeKind::adaptive) meta.adaptive = job.mode.act;
          meta.step = tr.steps;
          meta.rng_state = tr.rng_state;
          save_checkpoint(cell_dir / "model.ckpt", p, router ? &*router : nullptr, meta);
          write_report(cell_dir / "report.json", rep);
        }
        out[i] = SweepCell{job.label, job.seed, std::move(rep)};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const int n_threads = resolve_threads(options.threads, jobs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace

std::vector<SweepCell> sweep_k(const ModelParams& base, const EtdConfig& partition,
                               std::span<const int64_t> ks, std::span<const uint64_t> seeds,
                               const TaskData& task, const SweepOptions& options) {
  if (ks.empty()) fail(ErrorKind::config, "sweep_k: no iteration counts given");
  if (seeds.empty()) fail(ErrorKind::config, "sweep_k: no seeds given");
  std::vector<CellJob> jobs;
  for (int64_t k : ks) {
    EtdConfig cfg = partition;
    cfg.iterations = k;
    cfg.validate_for(base.config.n_layers);
    for (uint64_t seed : seeds) jobs.push_back({cfg.label(), seed, DepthMode::fixed(cfg)});
  }
  return run_cells(base, jobs, task, options);
}

std::vector<SweepCell> sweep_encoder_position(const ModelParams& base, int64_t n_think, int64_t k,
                                              std::span<const int64_t> encoder_sizes,
                                              std::span<const uint64_t> seeds, const TaskData& task,
                                              const SweepOptions& options) {
  if (encoder_sizes.empty()) fail(ErrorKind::config, "encoder sweep: no encoder sizes given");
  if (seeds.empty()) fail(ErrorKind::config, "encoder sweep: no seeds given");
  const int64_t L = base.config.n_layers;
  std::vector<CellJob> jobs;
  for (int64_t ne : encoder_sizes) {
    EtdConfig cfg{ne, n_think, k, L - ne - n_think};
    cfg.validate_for(L);
    for (uint64_t seed : seeds) jobs.push_back({cfg.label(), seed, DepthMode::fixed(cfg)});
  }
  return run_cells(base, jobs, task, options);
}

std::vector<SweepCell> compare_baseline_shapes(const ModelParams& base,
                                               const EtdConfig& selected_partition,
                                               int64_t flop_budget,
                                               std::span<const uint64_t> seeds,
                                               const TaskData& task, const SweepOptions& options) {
  if (seeds.empty()) fail(ErrorKind::config, "baseline comparison: no seeds given");
  const int64_t L = base.config.n_layers;
  auto solve_k = [&](const char* shape, int64_t fixed_layers, int64_t think) -> int64_t {
    const int64_t body = flop_budget - fixed_layers;
    if (body < think || body % think != 0)
      fail(ErrorKind::config, std::string("FLOPs budget ") + std::to_string(flop_budget) +
                                  " unsatisfiable for shape " + shape);
    return body / think;
  };

  std::vector<EtdConfig> shapes;
  shapes.push_back(EtdConfig{0, L, solve_k("all-layers loop", 0, L), 0});
  if (L > 4) {
    shapes.push_back(EtdConfig{2, L - 4, solve_k("fixed-ends loop", 4, L - 4), 2});
  }
  EtdConfig sel = selected_partition;
  sel.iterations = solve_k("selected partition", sel.n_encoder + sel.n_decoder, sel.n_think);
  shapes.push_back(sel);

  std::vector<CellJob> jobs;
  for (const EtdConfig& cfg : shapes) {
    cfg.validate_for(L);
    if (flops_layer_count(cfg) != flop_budget)
      fail(ErrorKind::config, "internal: shape " + cfg.label() + " misses the budget");
    for (uint64_t seed : seeds) jobs.push_back({cfg.label(), seed, DepthMode::fixed(cfg)});
  }
  return run_cells(base, jobs, task, options);
}

std::vector<SweepCell> sweep_adaptive(const ModelParams& base, const EtdConfig& partition,
                                      const ActOptions& act, std::span<const uint64_t> seeds,
                                      const TaskData& task, const SweepOptions& options) {
  if (seeds.empty()) fail(ErrorKind::config, "adaptive sweep: no seeds given");
  std::vector<CellJob> jobs;
  DepthMode mode = DepthMode::adaptive(partition, act);
  for (uint64_t seed : seeds) jobs.push_back({mode.label(), seed, mode});
  return run_cells(base, jobs, task, options);
}

std::vector<LabelSummary> summarize_cells(std::span<const SweepCell> cells) {
  std::vector<LabelSummary> out;
  for (const SweepCell& c : cells) {
    LabelSummary* row = nullptr;
    for (LabelSummary& s : out)
      if (s.label == c.label) row = &s;
    if (row == nullptr) {
      out.push_back(LabelSummary{c.label, c.report.params_layers, c.report.flops_layers, 0, 0, 0});
      row = &out.back();
    }
    row->mean_accuracy += c.report.accuracy;
    row->n_seeds += 1;
  }
  for (LabelSummary& s : out) s.mean_accuracy /= static_cast<double>(s.n_seeds);
  for (LabelSummary& s : out) {
    double var = 0.0;
    for (const SweepCell& c : cells)
      if (c.label == s.label) {
        const double d = c.report.accuracy - s.mean_accuracy;
        var += d * d;
      }
    s.stdev_accuracy = s.n_seeds > 1 ? std::sqrt(var / static_cast<double>(s.n_seeds - 1)) : 0.0;
  }
  return out;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepCell> cells) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(17);
  os << "label,seed,params_layers,flops_layers,accuracy,loss,mean_steps,delta_pct\n";
  for (const SweepCell& c : cells) {
    os << c.label << ',' << c.seed << ',' << c.report.params_layers << ','
       << c.report.flops_layers << ',' << c.report.accuracy << ',' << c.report.loss << ',';
    if (c.report.adaptive.has_value()) os << c.report.adaptive->mean_steps;
    os << ',';
    if (c.report.delta_pct.has_value()) os << *c.report.delta_pct;
    os << '\n';
  }
  write_text_atomic(path, os.str());
}

void write_summary_csv(const std::filesystem::path& path, std::span<const LabelSummary> rows) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(17);
  os << "label,params_layers,flops_layers,mean_accuracy,stdev_accuracy,n_seeds,delta_pct\n";
  const double base = rows.empty() ? 0.0 : rows.front().mean_accuracy;
  for (const LabelSummary& s : rows) {
    os << s.label << ',' << s.params_layers << ',' << s.flops_layers << ',' << s.mean_accuracy
       << ',' << s.stdev_accuracy << ',' << s.n_seeds << ',';
    if (base > 0.0) os << 100.0 * (s.mean_accuracy - base) / base;
    os << '\n';
  }
  write_text_atomic(path, os.str());
}

}  // namespace etdlab
