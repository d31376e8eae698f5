#pragma once

#include <cmath>
#include <cstdint>
#include <locale>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace etdlab {

enum class ErrorKind {
  dimension,   // shape mismatch between operands
  input,       // bad values: token out of range, empty corpus, target out of range
  config,      // invalid configuration object
  usage,       // API misuse: backward twice, non-scalar backward root
  io,          // file problems
  degenerate,  // degenerate numeric input, e.g. zero-norm vector
  selection,   // boundary selection failed (no knee / impossible partition)
  diverged,    // training produced a non-finite loss
};

const char* error_kind_name(ErrorKind kind);

/// Library-wide exception. `detail()` optionally carries machine-readable
/// context (JSON for selection failures) for diagnostics.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string msg, std::string detail = {})
      : std::runtime_error(std::move(msg)), kind_(kind), detail_(std::move(detail)) {}
  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg, std::string detail = {}) {
  throw Error(kind, msg, std::move(detail));
}

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

/// Deterministic RNG. Normal deviates use an explicit Box-Muller transform
/// instead of std::normal_distribution, whose output is implementation
/// defined; the same seed must reproduce the same stream everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t u64() { return engine_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  /// Uniform index in [0, n). Modulo bias is irrelevant at these scales;
  /// determinism is what matters.
  int64_t index(int64_t n) {
    if (n <= 0) fail(ErrorKind::usage, "Rng::index requires n > 0");
    return static_cast<int64_t>(u64() % static_cast<uint64_t>(n));
  }

  std::string state() const {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << engine_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << spare_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is.imbue(std::locale::classic());
    int spare_flag = 0;
    is >> engine_ >> spare_flag >> spare_;
    if (is.fail()) fail(ErrorKind::input, "malformed RNG state string");
    has_spare_ = spare_flag != 0;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace etdlab
