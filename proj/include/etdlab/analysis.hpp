#pragma once

#include <filesystem>
#include <optional>

#include "etdlab/etd.hpp"

namespace etdlab {

/// Mean direction change of the last-token residual vector across a fixed
/// layer offset. distances[l] = mean over sequences of d(x^l, x^(l+gap)),
/// l in [0, L-gap]; values lie in [0, 1].
struct AngularProfile {
  int gap = 1;
  std::vector<double> distances;
  int64_t sample_count = 0;
  std::string corpus_id;
};

/// arccos of the cosine between u and v, scaled by 1/pi so the result lies
/// in [0, 1]. The cosine is clamped into [-1, 1] before arccos; zero-norm
/// input is an error.
double angular_distance(std::span<const double> u, std::span<const double> v);

/// Profiles a model over a corpus of equal-length token sequences: for each
/// sequence, captures the inputs to every layer plus the final state, takes
/// the last-token vector at each depth, and averages d(x^l, x^(l+gap)) in
/// corpus order.
AngularProfile profile_model(const ModelParams& params,
                             const std::vector<std::vector<int32_t>>& corpus, int gap,
                             int64_t batch_size = 32, const std::string& corpus_id = {});

/// Knee detection. `difference` is the curve the detection actually ran on
/// (for convex decreasing data the normalized curve is flipped vertically
/// first, so candidate knees are its local maxima). `literal_*` fields report
/// what the unflipped difference reading would have produced, so divergence
/// between the two conventions is always visible in exported reports.
struct KneeResult {
  std::optional<int> knee;
  std::vector<double> smoothed;    // ys after optional quadratic fit
  std::vector<double> difference;  // detection curve D_i
  std::vector<int> candidates;     // local-max indices of the detection curve
  std::vector<double> candidate_thresholds;
  double sensitivity = 1.0;
  bool smoothed_input = false;
  std::optional<int> literal_knee;
  bool literal_agrees = false;
};

/// Kneedle on (xs, ys): optional least-squares quadratic smoothing, min-max
/// normalization of both axes, difference curve against the diagonal, local
/// maxima as candidates, threshold T = D - S * mean_x_gap; a knee is declared
/// at a candidate when some later difference value drops below its threshold
/// before the next local maximum. Needs >= 4 points and strictly increasing
/// xs; constant ys give an absent knee.
KneeResult kneedle(std::span<const double> xs, std::span<const double> ys, double sensitivity,
                   bool smooth);

struct SelectionResult {
  int64_t n_encoder = 0;
  int64_t n_think = 0;
  int64_t n_decoder = 0;
  int forward_knee = 0;
  int reverse_knee = 0;  // original layer coordinates; n_decoder = L - reverse_knee
  KneeResult forward;
  KneeResult reverse;

  EtdConfig partition(int64_t iterations = 1) const {
    return EtdConfig{n_encoder, n_think, iterations, n_decoder};
  }
};

/// Boundary selection on a gap-1 profile: the forward knee fixes the encoder
/// size; the same detection applied to the reversed distance tail (layers
/// past the encoder boundary) fixes the decoder size. Fails with diagnostic
/// curves attached when either knee is absent or the think block would be
/// empty.
SelectionResult select_config(const AngularProfile& profile, double sensitivity = 1.0,
                              bool smooth = true);

// ---- report I/O -------------------------------------------------------

std::string profile_to_json(const AngularProfile& profile);
AngularProfile profile_from_json(const std::string& text);
AngularProfile load_profile(const std::filesystem::path& path);
void write_profile_json(const std::filesystem::path& path, const AngularProfile& profile);
/// CSV with a "layer,distance" header row.
void write_profile_csv(const std::filesystem::path& path, const AngularProfile& profile);
/// Full selection report: {"gap", "distances", "forward_knee", "reverse_knee",
/// "config", curve diagnostics}.
std::string selection_to_json(const AngularProfile& profile, const SelectionResult& sel,
                              std::optional<int64_t> iterations);

}  // namespace etdlab
