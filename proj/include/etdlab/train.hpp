#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "etdlab/act.hpp"
#include "etdlab/optim.hpp"
#include "etdlab/tasks.hpp"

namespace etdlab {

struct TrainConfig {
  int64_t steps = 500;
  int64_t batch_size = 16;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.01;
  int64_t warmup_steps = 20;
  double clip_norm = 1.0;
  uint64_t seed = 1;
  int64_t eval_interval = 0;  // 0 disables the periodic loss summary line

  void validate() const;
};

enum class DepthModeKind { plain, fixed, adaptive };

/// How depth is applied during a run: the plain stack, a fixed-k partition,
/// or per-token adaptive iteration over the partition's think block.
struct DepthMode {
  DepthModeKind kind = DepthModeKind::plain;
  EtdConfig etd;   // fixed/adaptive partitions (iterations ignored when adaptive)
  ActOptions act;  // adaptive only

  static DepthMode plain();
  static DepthMode fixed(EtdConfig cfg);
  static DepthMode adaptive(EtdConfig partition, ActOptions options);

  std::string label() const;
};

struct TrainResult {
  int64_t steps = 0;
  double final_loss = 0.0;
  std::string rng_state;  // data-sampling RNG state at the end of the run
};

/// Single-threaded training loop: sample batch, forward per mode, mean
/// masked cross-entropy (+ optional halting regularizer in adaptive mode),
/// backward, global-norm clip, AdamW. Deterministic given the seed; every
/// step appends a JSON line to `log` when provided. A non-finite loss aborts
/// with a diagnostic. `router` is required (and trained) only in adaptive
/// mode.
TrainResult train(ModelParams& params, RouterParams* router, const DepthMode& mode,
                  const Dataset& trainset, const TrainConfig& cfg, std::ostream* log = nullptr);

struct AdaptiveSummary {
  double mean_steps = 0.0;
  std::vector<int64_t> histogram;
  double frac_threshold = 0.0;
  double frac_cap = 0.0;
  int64_t tokens = 0;
};

struct EvalReport {
  std::string task;
  std::string depth_label;      // "plain", "2-4*3-2" or "adaptive(2-4-2)"
  int64_t params_layers = 0;
  int64_t flops_layers = 0;     // fixed accounting; adaptive reports mean steps instead
  double accuracy = 0.0;        // exact match over supervised positions
  double loss = 0.0;            // mean NLL over supervised positions
  int64_t n_examples = 0;
  uint64_t seed = 0;
  std::string aggregation = "macro";
  std::optional<AdaptiveSummary> adaptive;
  std::optional<double> baseline_accuracy;
  std::optional<double> delta_pct;  // 100 * (acc - baseline) / baseline
};

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
void write_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport load_report(const std::filesystem::path& path);

/// Sets baseline_accuracy and delta_pct on `report`.
void attach_baseline(EvalReport& report, double baseline_accuracy);

/// Greedy decoding at the supervised positions: an example counts as correct
/// only if every supervised position matches its target.
EvalReport evaluate(const ModelParams& params, const RouterParams* router, const DepthMode& mode,
                    const Dataset& testset, int64_t batch_size = 64, uint64_t seed = 0);

/// Exact-match accuracy of externally supplied predictions (one predicted
/// token per position, row-major) against a dataset's targets and masks.
double exact_match_accuracy(const Dataset& dataset, std::span<const int32_t> predictions);

std::string task_label(const TaskSpec& spec);

// ---- experiment sweeps -------------------------------------------------

struct SweepOptions {
  TrainConfig train;
  int64_t eval_batch = 64;
  std::filesystem::path out_dir;  // when set, cells write logs/ckpts/reports here
  int threads = 0;                // 0: ETD_LAB_THREADS or hardware concurrency
};

struct SweepCell {
  std::string label;
  uint64_t seed = 0;
  EvalReport report;
};

/// One phase-2 training plus evaluation per (k, seed), all starting from the
/// same base weights.
std::vector<SweepCell> sweep_k(const ModelParams& base, const EtdConfig& partition,
                               std::span<const int64_t> ks, std::span<const uint64_t> seeds,
                               const TaskData& task, const SweepOptions& options);

/// Varies the encoder size at fixed think-block size and iteration count.
std::vector<SweepCell> sweep_encoder_position(const ModelParams& base, int64_t n_think, int64_t k,
                                              std::span<const int64_t> encoder_sizes,
                                              std::span<const uint64_t> seeds, const TaskData& task,
                                              const SweepOptions& options);

/// FLOPs-matched comparison of recursion shapes at `flop_budget` executed
/// layers: loop over the whole stack, loop over the middle with two fixed
/// layers at each end, and the supplied selected partition. Fails when a
/// shape cannot meet the budget with an integer k.
std::vector<SweepCell> compare_baseline_shapes(const ModelParams& base,
                                               const EtdConfig& selected_partition,
                                               int64_t flop_budget,
                                               std::span<const uint64_t> seeds,
                                               const TaskData& task, const SweepOptions& options);

/// Adaptive-depth training cell (optionally several seeds).
std::vector<SweepCell> sweep_adaptive(const ModelParams& base, const EtdConfig& partition,
                                      const ActOptions& act, std::span<const uint64_t> seeds,
                                      const TaskData& task, const SweepOptions& options);

struct LabelSummary {
  std::string label;
  int64_t params_layers = 0;
  int64_t flops_layers = 0;
  double mean_accuracy = 0.0;
  double stdev_accuracy = 0.0;
  int64_t n_seeds = 0;
};

/// Aggregates cells by label (mean and sample stdev over seeds), preserving
/// first-appearance order.
std::vector<LabelSummary> summarize_cells(std::span<const SweepCell> cells);

/// CSV with one row per cell (label, seed, accounting columns, metrics).
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepCell> cells);

/// CSV with one row per label: mean/stdev accuracy over seeds and the
/// relative improvement against the first row's mean.
void write_summary_csv(const std::filesystem::path& path, std::span<const LabelSummary> rows);

}  // namespace etdlab
