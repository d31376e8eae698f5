#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "etdlab/common.hpp"

namespace etdlab {

/// Byte-level vocabulary: token id == byte value for 7-bit ASCII; any other
/// byte maps to the fallback token 0.
constexpr int32_t kVocabSize = 128;
constexpr int32_t kFallbackToken = 0;
constexpr char kPadChar = ' ';

std::vector<int32_t> tokenize(std::string_view text);
std::string detokenize(std::span<const int32_t> tokens);

enum class TaskKind { mod_chain, k_hop, copy_reverse, lm_corpus };

TaskKind task_kind_from_string(const std::string& s);
const char* task_kind_name(TaskKind k);

struct TaskSpec {
  TaskKind kind = TaskKind::mod_chain;
  // mod_chain: `depth` operators over `modulus`-residue digits.
  int64_t depth = 4;
  int64_t modulus = 7;
  // k_hop: `hops` applications of a random function over `domain` letters.
  int64_t hops = 2;
  int64_t domain = 8;
  // copy_reverse: string length.
  int64_t length = 8;
  // lm_corpus
  std::string corpus_path;

  int64_t seq_len = 24;
  uint64_t seed = 7;
  int64_t train_count = 4096;
  int64_t test_count = 512;

  void validate() const;
};

/// Next-token layout: input[t] predicts target[t]; mask marks the supervised
/// answer positions only.
struct Example {
  std::string text;  // rendered instance including the answer
  std::vector<int32_t> input;
  std::vector<int32_t> target;
  std::vector<uint8_t> mask;
};

struct Dataset {
  TaskSpec spec;
  std::string split;  // "train" or "test"
  int64_t seq_len = 0;
  std::vector<Example> examples;

  int64_t size() const { return static_cast<int64_t>(examples.size()); }
};

/// Both splits of one task; test instances are generated first and train
/// generation rejects their strings, so the splits are disjoint by
/// construction.
struct TaskData {
  Dataset train;
  Dataset test;
};

TaskData make_task(const TaskSpec& spec);

/// Individual generators. `exclude` rejects instances whose rendered string
/// is present (used to keep splits disjoint).
Dataset gen_mod_chain(uint64_t seed, int64_t depth, int64_t modulus, int64_t count,
                      int64_t seq_len, const std::unordered_set<std::string>* exclude = nullptr);
Dataset gen_k_hop(uint64_t seed, int64_t hops, int64_t domain, int64_t count, int64_t seq_len,
                  const std::unordered_set<std::string>* exclude = nullptr);
Dataset gen_copy_reverse(uint64_t seed, int64_t length, int64_t count, int64_t seq_len,
                         const std::unordered_set<std::string>* exclude = nullptr);

/// Left-associative evaluation of d0 op0 d1 op1 ... mod p, in [0, p).
int64_t mod_chain_eval(std::span<const int64_t> operands, std::span<const char> ops, int64_t modulus);
/// f^hops(start) by table iteration; table[i] is f(i).
int64_t k_hop_eval(std::span<const int64_t> table, int64_t start, int64_t hops);

/// Fixed-length windows from a plain-text file for profiling. Windows use
/// stride == seq_len; a trailing partial window is dropped.
std::vector<std::vector<int32_t>> load_corpus(const std::filesystem::path& path, int64_t seq_len);

/// Line-delimited JSON {"input": [...], "target": [...], "mask": [...]}.
void write_dataset_jsonl(const std::filesystem::path& path, const Dataset& dataset);

/// Batch assembled from dataset rows; used by training and evaluation.
/// `valid` marks positions inside the rendered instance (non-padding).
struct ExampleBatch {
  int64_t batch = 0, seq = 0;
  std::vector<int32_t> input;
  std::vector<int32_t> target;
  std::vector<uint8_t> mask;
  std::vector<uint8_t> valid;
};

ExampleBatch assemble_batch(const Dataset& dataset, std::span<const int64_t> indices);

}  // namespace etdlab
