#include "etdlab/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "etdlab/ioutil.hpp"
#include "json.hpp"

namespace etdlab {

namespace {

constexpr const char* kModOps = "+-*";

// Builds the next-token example from rendered text. The answer occupies the
// final `answer_len` characters; supervision lands on the positions that
// predict them.
Example finish_example(std::string text, int64_t answer_len, int64_t seq_len) {
  if (static_cast<int64_t>(text.size()) > seq_len + 1)
    fail(ErrorKind::config, "instance '" + text + "' does not fit seq_len " +
                                std::to_string(seq_len));
  Example ex;
  ex.text = text;
  const int64_t answer_end = static_cast<int64_t>(text.size());
  text.resize(static_cast<size_t>(seq_len) + 1, kPadChar);
  std::vector<int32_t> tokens = tokenize(text);
  ex.input.assign(tokens.begin(), tokens.end() - 1);
  ex.target.assign(tokens.begin() + 1, tokens.end());
  ex.mask.assign(static_cast<size_t>(seq_len), 0);
  for (int64_t pos = answer_end - answer_len; pos < answer_end; ++pos)
    ex.mask[static_cast<size_t>(pos - 1)] = 1;  // input[pos-1] predicts text[pos]
  return ex;
}

template <typename Render>
Dataset generate(uint64_t seed, int64_t count, int64_t seq_len,
                 const std::unordered_set<std::string>* exclude, Render render) {
  Dataset ds;
  ds.seq_len = seq_len;
  ds.examples.reserve(static_cast<size_t>(count));
  Rng rng(seed);
  int64_t rejected = 0;
  while (static_cast<int64_t>(ds.examples.size()) < count) {
    auto [text, answer_len] = render(rng);
    if (exclude != nullptr && exclude->contains(text)) {
      if (++rejected > count * 1000 + 100000)
        fail(ErrorKind::config, "instance space too small to keep splits disjoint");
      continue;
    }
    ds.examples.push_back(finish_example(std::move(text), answer_len, seq_len));
  }
  return ds;
}

}  // namespace

std::vector<int32_t> tokenize(std::string_view text) {
  std::vector<int32_t> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(c < 128 ? static_cast<int32_t>(c) : kFallbackToken);
  return out;
}

std::string detokenize(std::span<const int32_t> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int32_t t : tokens) out.push_back(static_cast<char>(t & 0x7f));
  return out;
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "mod_chain") return TaskKind::mod_chain;
  if (s == "k_hop") return TaskKind::k_hop;
  if (s == "copy_reverse") return TaskKind::copy_reverse;
  if (s == "lm_corpus") return TaskKind::lm_corpus;
  fail(ErrorKind::config, "unknown task kind '" + s + "'");
}

const char* task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::mod_chain: return "mod_chain";
    case TaskKind::k_hop: return "k_hop";
    case TaskKind::copy_reverse: return "copy_reverse";
    case TaskKind::lm_corpus: return "lm_corpus";
  }
  return "unknown";
}

void TaskSpec::validate() const {
  if (seq_len < 2) fail(ErrorKind::config, "seq_len must be >= 2");
  if (train_count < 0 || test_count < 0) fail(ErrorKind::config, "split sizes must be >= 0");
  switch (kind) {
    case TaskKind::mod_chain:
      if (depth < 1) fail(ErrorKind::config, "mod_chain depth must be >= 1");
      if (modulus < 2 || modulus > 10)
        fail(ErrorKind::config, "mod_chain modulus must lie in [2, 10] (single-digit answers)");
      if (2 * depth + 3 > seq_len + 1)
        fail(ErrorKind::config, "mod_chain depth " + std::to_string(depth) +
                                    " needs seq_len >= " + std::to_string(2 * depth + 2));
      break;
    case TaskKind::k_hop:
      if (hops < 1) fail(ErrorKind::config, "k_hop hops must be >= 1");
      if (domain < 2 || domain > 26) fail(ErrorKind::config, "k_hop domain must lie in [2, 26]");
      if (3 * domain + 3 > seq_len + 1)
        fail(ErrorKind::config, "k_hop domain " + std::to_string(domain) + " needs seq_len >= " +
                                    std::to_string(3 * domain + 2));
      break;
    case TaskKind::copy_reverse:
      if (length < 1) fail(ErrorKind::config, "copy_reverse length must be >= 1");
      if (2 * length + 1 > seq_len + 1)
        fail(ErrorKind::config, "copy_reverse length " + std::to_string(length) +
                                    " needs seq_len >= " + std::to_string(2 * length));
      break;
    case TaskKind::lm_corpus:
      if (corpus_path.empty()) fail(ErrorKind::config, "lm_corpus needs corpus_path");
      break;
  }
}

int64_t mod_chain_eval(std::span<const int64_t> operands, std::span<const char> ops,
                       int64_t modulus) {
  if (operands.size() != ops.size() + 1)
    fail(ErrorKind::usage, "mod_chain_eval: need one more operand than operators");
  int64_t acc = operands[0];
  for (size_t i = 0; i < ops.size(); ++i) {
    switch (ops[i]) {
      case '+': acc = acc + operands[i + 1]; break;
      case '-': acc = acc - operands[i + 1]; break;
      case '*': acc = acc * operands[i + 1]; break;
      default: fail(ErrorKind::usage, "mod_chain_eval: unknown operator");
    }
    acc = ((acc % modulus) + modulus) % modulus;
  }
  return acc;
}

int64_t k_hop_eval(std::span<const int64_t> table, int64_t start, int64_t hops) {
  int64_t x = start;
  for (int64_t h = 0; h < hops; ++h) {
    if (x < 0 || x >= static_cast<int64_t>(table.size()))
      fail(ErrorKind::usage, "k_hop_eval: value escapes the table");
    x = table[static_cast<size_t>(x)];
  }
  return x;
}

Dataset gen_mod_chain(uint64_t seed, int64_t depth, int64_t modulus, int64_t count,
                      int64_t seq_len, const std::unordered_set<std::string>* exclude) {
  Dataset ds = generate(seed, count, seq_len, exclude, [&](Rng& rng) {
    std::vector<int64_t> operands(static_cast<size_t>(depth) + 1);
    std::vector<char> ops(static_cast<size_t>(depth));
    for (int64_t& o : operands) o = rng.index(modulus);
    for (char& c : ops) c = kModOps[rng.index(3)];
    std::string text;
    text.reserve(static_cast<size_t>(2 * depth + 3));
    for (size_t i = 0; i < operands.size(); ++i) {
      text.push_back(static_cast<char>('0' + operands[i]));
      if (i < ops.size()) text.push_back(ops[i]);
    }
    text.push_back('=');
    text.push_back(static_cast<char>('0' + mod_chain_eval(operands, ops, modulus)));
    return std::pair<std::string, int64_t>(std::move(text), 1);
  });
  ds.spec.kind = TaskKind::mod_chain;
  ds.spec.depth = depth;
  ds.spec.modulus = modulus;
  ds.spec.seed = seed;
  ds.spec.seq_len = seq_len;
  return ds;
}

Dataset gen_k_hop(uint64_t seed, int64_t hops, int64_t domain, int64_t count, int64_t seq_len,
                  const std::unordered_set<std::string>* exclude) {
  Dataset ds = generate(seed, count, seq_len, exclude, [&](Rng& rng) {
    std::vector<int64_t> table(static_cast<size_t>(domain));
    for (int64_t& t : table) t = rng.index(domain);
    const int64_t start = rng.index(domain);
    std::string text;
    text.reserve(static_cast<size_t>(3 * domain + 3));
    for (int64_t i = 0; i < domain; ++i) {
      text.push_back(static_cast<char>('a' + i));
      text.push_back(static_cast<char>('a' + table[static_cast<size_t>(i)]));
      text.push_back(' ');
    }
    text.push_back('?');
    text.push_back(static_cast<char>('a' + start));
    text.push_back('=');
    text.push_back(static_cast<char>('a' + k_hop_eval(table, start, hops)));
    return std::pair<std::string, int64_t>(std::move(text), 1);
  });
  ds.spec.kind = TaskKind::k_hop;
  ds.spec.hops = hops;
  ds.spec.domain = domain;
  ds.spec.seed = seed;
  ds.spec.seq_len = seq_len;
  return ds;
}

Dataset gen_copy_reverse(uint64_t seed, int64_t length, int64_t count, int64_t seq_len,
                         const std::unordered_set<std::string>* exclude) {
  Dataset ds = generate(seed, count, seq_len, exclude, [&](Rng& rng) {
    std::string s(static_cast<size_t>(length), 'a');
    for (char& c : s) c = static_cast<char>('a' + rng.index(26));
    std::string text = s + ">" + std::string(s.rbegin(), s.rend());
    return std::pair<std::string, int64_t>(std::move(text), length);
  });
  ds.spec.kind = TaskKind::copy_reverse;
  ds.spec.length = length;
  ds.spec.seed = seed;
  ds.spec.seq_len = seq_len;
  return ds;
}

TaskData make_task(const TaskSpec& spec) {
  spec.validate();
  if (spec.kind == TaskKind::lm_corpus)
    fail(ErrorKind::config, "lm_corpus is a profiling corpus, not a supervised task");
  auto gen = [&](uint64_t seed, int64_t count,
                 const std::unordered_set<std::string>* exclude) -> Dataset {
    switch (spec.kind) {
      case TaskKind::mod_chain:
        return gen_mod_chain(seed, spec.depth, spec.modulus, count, spec.seq_len, exclude);
      case TaskKind::k_hop:
        return gen_k_hop(seed, spec.hops, spec.domain, count, spec.seq_len, exclude);
      case TaskKind::copy_reverse:
        return gen_copy_reverse(seed, spec.length, count, spec.seq_len, exclude);
      default: fail(ErrorKind::config, "unsupported task kind");
    }
  };
  TaskData data;
  // Test first; its strings are the exclusion set for train.
  data.test = gen(spec.seed + 1, spec.test_count, nullptr);
  std::unordered_set<std::string> test_strings;
  test_strings.reserve(data.test.examples.size());
  for (const Example& ex : data.test.examples) test_strings.insert(ex.text);
  data.train = gen(spec.seed, spec.train_count, &test_strings);
  data.test.spec = spec;
  data.train.spec = spec;
  data.train.split = "train";
  data.test.split = "test";
  return data;
}

std::vector<std::vector<int32_t>> load_corpus(const std::filesystem::path& path, int64_t seq_len) {
  if (seq_len < 1) fail(ErrorKind::config, "load_corpus: seq_len must be >= 1");
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open corpus " + path.string());
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (text.empty()) fail(ErrorKind::io, "corpus " + path.string() + " is empty");
  std::vector<int32_t> tokens = tokenize(text);
  std::vector<std::vector<int32_t>> windows;
  windows.reserve(tokens.size() / static_cast<size_t>(seq_len));
  for (size_t start = 0; start + static_cast<size_t>(seq_len) <= tokens.size();
       start += static_cast<size_t>(seq_len)) {
    windows.emplace_back(tokens.begin() + static_cast<int64_t>(start),
                         tokens.begin() + static_cast<int64_t>(start) + seq_len);
  }
  if (windows.empty())
    fail(ErrorKind::io, "corpus " + path.string() + " is shorter than one window");
  return windows;
}

void write_dataset_jsonl(const std::filesystem::path& path, const Dataset& dataset) {
  std::ostringstream os;
  for (const Example& ex : dataset.examples) {
    nlohmann::json j;
    j["input"] = ex.input;
    j["target"] = ex.target;
    j["mask"] = ex.mask;
    os << j.dump() << '\n';
  }
  write_text_atomic(path, os.str());
}

ExampleBatch assemble_batch(const Dataset& dataset, std::span<const int64_t> indices) {
  if (indices.empty()) fail(ErrorKind::usage, "assemble_batch: empty index list");
  ExampleBatch b;
  b.batch = static_cast<int64_t>(indices.size());
  b.seq = dataset.seq_len;
  b.input.reserve(static_cast<size_t>(b.batch * b.seq));
  b.target.reserve(static_cast<size_t>(b.batch * b.seq));
  b.mask.reserve(static_cast<size_t>(b.batch * b.seq));
  b.valid.reserve(static_cast<size_t>(b.batch * b.seq));
  for (int64_t idx : indices) {
    const Example& ex = dataset.examples.at(static_cast<size_t>(idx));
    b.input.insert(b.input.end(), ex.input.begin(), ex.input.end());
    b.target.insert(b.target.end(), ex.target.begin(), ex.target.end());
    b.mask.insert(b.mask.end(), ex.mask.begin(), ex.mask.end());
    const int64_t content = static_cast<int64_t>(ex.text.size()) - 1;  // input positions
    for (int64_t t = 0; t < b.seq; ++t) b.valid.push_back(t < content ? 1 : 0);
  }
  return b;
}

}  // namespace etdlab
