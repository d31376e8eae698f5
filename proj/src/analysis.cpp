#include "etdlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "etdlab/ioutil.hpp"
#include "etdlab/kernels.hpp"
#include "json.hpp"

namespace etdlab {

namespace {

using nlohmann::json;

// Least-squares quadratic fit evaluated back at the sample points.
std::vector<double> quadratic_fit(std::span<const double> xs, std::span<const double> ys) {
  const size_t n = xs.size();
  double s[5] = {static_cast<double>(n), 0, 0, 0, 0};  // sums of x^1..x^4
  double b[3] = {0, 0, 0};                             // sums of y, xy, x^2 y
  for (size_t i = 0; i < n; ++i) {
    const double x = xs[i], x2 = x * x;
    s[1] += x;
    s[2] += x2;
    s[3] += x2 * x;
    s[4] += x2 * x2;
    b[0] += ys[i];
    b[1] += x * ys[i];
    b[2] += x2 * ys[i];
  }
  double m[3][4] = {{s[0], s[1], s[2], b[0]}, {s[1], s[2], s[3], b[1]}, {s[2], s[3], s[4], b[2]}};
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    std::swap(m[col], m[piv]);
    if (m[col][col] == 0.0) fail(ErrorKind::degenerate, "quadratic fit: singular system");
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double f = m[r][col] / m[col][col];
      for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
    }
  }
  const double a0 = m[0][3] / m[0][0];
  const double a1 = m[1][3] / m[1][1];
  const double a2 = m[2][3] / m[2][2];
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a0 + a1 * xs[i] + a2 * xs[i] * xs[i];
  return out;
}

struct Detection {
  std::optional<int> knee;
  std::vector<int> candidates;
  std::vector<double> thresholds;
};

// Local maxima of the difference curve are candidates; candidate i* is
// declared a knee when some later value drops below T = D[i*] - S * dx
// before the next local maximum. The first declared candidate wins.
Detection detect_knee(std::span<const double> diff, double sensitivity, double mean_dx) {
  Detection det;
  const int n = static_cast<int>(diff.size());
  for (int i = 1; i + 1 < n; ++i)
    if (diff[i - 1] < diff[i] && diff[i + 1] < diff[i]) det.candidates.push_back(i);
  det.thresholds.reserve(det.candidates.size());
  for (int c : det.candidates) det.thresholds.push_back(diff[c] - sensitivity * mean_dx);
  for (size_t ci = 0; ci < det.candidates.size(); ++ci) {
    const int c = det.candidates[ci];
    const int next_max = ci + 1 < det.candidates.size() ? det.candidates[ci + 1] : n;
    for (int j = c + 1; j < next_max; ++j) {
      if (diff[j] < det.thresholds[ci]) {
        if (!det.knee.has_value()) det.knee = c;
        break;
      }
    }
    if (det.knee.has_value()) break;
  }
  return det;
}

json knee_to_json(const KneeResult& k) {
  json out;
  out["knee"] = k.knee.has_value() ? json(*k.knee) : json(nullptr);
  out["smoothed"] = k.smoothed;
  out["difference"] = k.difference;
  out["candidates"] = k.candidates;
  out["candidate_thresholds"] = k.candidate_thresholds;
  out["sensitivity"] = k.sensitivity;
  out["smoothed_input"] = k.smoothed_input;
  out["appendix_literal_knee"] = k.literal_knee.has_value() ? json(*k.literal_knee) : json(nullptr);
  out["appendix_literal_agrees"] = k.literal_agrees;
  return out;
}

}  // namespace

double angular_distance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    fail(ErrorKind::dimension, "angular_distance: vector lengths differ");
  if (u.empty()) fail(ErrorKind::input, "angular_distance: empty vectors");
  const auto& K = kernels::active();
  const double nu = std::sqrt(K.sum_sq(u.data(), u.size()));
  const double nv = std::sqrt(K.sum_sq(v.data(), v.size()));
  if (nu == 0.0 || nv == 0.0)
    fail(ErrorKind::degenerate, "angular_distance: zero-norm vector");
  double c = K.dot(u.data(), v.data(), u.size()) / (nu * nv);
  c = std::clamp(c, -1.0, 1.0);  // dot products overshoot by ~1e-16
  return std::acos(c) / std::numbers::pi;
}

AngularProfile profile_model(const ModelParams& params,
                             const std::vector<std::vector<int32_t>>& corpus, int gap,
                             int64_t batch_size, const std::string& corpus_id) {
  if (corpus.empty()) fail(ErrorKind::input, "profile_model: empty corpus");
  if (gap < 1) fail(ErrorKind::input, "profile_model: gap must be >= 1");
  const int64_t seq = static_cast<int64_t>(corpus.front().size());
  if (seq < 1) fail(ErrorKind::input, "profile_model: sequences must be nonempty");
  for (const auto& s : corpus)
    if (static_cast<int64_t>(s.size()) != seq)
      fail(ErrorKind::input, "profile_model: sequences must share one length");
  const int64_t L = params.config.n_layers;
  if (gap > L) fail(ErrorKind::input, "profile_model: gap exceeds layer count");
  const int64_t d = params.config.d_model;
  const int64_t n_bounds = L - gap + 1;

  std::vector<double> sums(static_cast<size_t>(n_bounds), 0.0);
  const int64_t total = static_cast<int64_t>(corpus.size());
  for (int64_t start = 0; start < total; start += batch_size) {
    const int64_t b = std::min(batch_size, total - start);
    std::vector<int32_t> tokens;
    tokens.reserve(static_cast<size_t>(b * seq));
    for (int64_t i = 0; i < b; ++i)
      tokens.insert(tokens.end(), corpus[static_cast<size_t>(start + i)].begin(),
                    corpus[static_cast<size_t>(start + i)].end());
    std::vector<Tensor> states = capture_residuals(tokens, b, seq, params);
    for (int64_t i = 0; i < b; ++i) {
      const int64_t row = (i * seq + (seq - 1)) * d;  // last token of sequence i
      for (int64_t l = 0; l < n_bounds; ++l) {
        std::span<const double> u = states[static_cast<size_t>(l)].data().subspan(
            static_cast<size_t>(row), static_cast<size_t>(d));
        std::span<const double> v = states[static_cast<size_t>(l + gap)].data().subspan(
            static_cast<size_t>(row), static_cast<size_t>(d));
        sums[static_cast<size_t>(l)] += angular_distance(u, v);
      }
    }
  }
  AngularProfile profile;
  profile.gap = gap;
  profile.sample_count = total;
  profile.corpus_id = corpus_id;
  profile.distances.resize(static_cast<size_t>(n_bounds));
  for (int64_t l = 0; l < n_bounds; ++l)
    profile.distances[static_cast<size_t>(l)] = sums[static_cast<size_t>(l)] / static_cast<double>(total);
  return profile;
}

KneeResult kneedle(std::span<const double> xs, std::span<const double> ys, double sensitivity,
                   bool smooth) {
  if (xs.size() != ys.size()) fail(ErrorKind::dimension, "kneedle: xs/ys lengths differ");
  if (xs.size() < 4) fail(ErrorKind::input, "kneedle: need at least 4 points");
  for (size_t i = 1; i < xs.size(); ++i)
    if (!(xs[i] > xs[i - 1])) fail(ErrorKind::input, "kneedle: xs must be strictly increasing");
  if (!(sensitivity > 0.0)) fail(ErrorKind::input, "kneedle: sensitivity must be > 0");

  KneeResult res;
  res.sensitivity = sensitivity;
  res.smoothed_input = smooth;
  res.smoothed = smooth ? quadratic_fit(xs, ys) : std::vector<double>(ys.begin(), ys.end());

  const size_t n = xs.size();
  const double xmin = xs.front(), xmax = xs.back();
  double ymin = res.smoothed[0], ymax = res.smoothed[0];
  for (double y : res.smoothed) {
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  if (ymax == ymin) {
    // Constant curve: normalization degenerates, no knee by definition.
    res.difference.assign(n, 0.0);
    return res;
  }
  std::vector<double> xn(n), yn(n);
  for (size_t i = 0; i < n; ++i) {
    xn[i] = (xs[i] - xmin) / (xmax - xmin);
    yn[i] = (res.smoothed[i] - ymin) / (ymax - ymin);
  }
  const double mean_dx = 1.0 / static_cast<double>(n - 1);

  // Detection curve for a convex decreasing profile: flip vertically so the
  // knee becomes a local maximum of the deviation from the diagonal.
  res.difference.resize(n);
  std::vector<double> literal(n);
  for (size_t i = 0; i < n; ++i) {
    res.difference[i] = (1.0 - yn[i]) - xn[i];
    literal[i] = yn[i] - (1.0 - xn[i]);
  }
  Detection det = detect_knee(res.difference, sensitivity, mean_dx);
  res.knee = det.knee;
  res.candidates = std::move(det.candidates);
  res.candidate_thresholds = std::move(det.thresholds);

  Detection lit = detect_knee(literal, sensitivity, mean_dx);
  res.literal_knee = lit.knee;
  res.literal_agrees = res.literal_knee == res.knee;
  return res;
}

SelectionResult select_config(const AngularProfile& profile, double sensitivity, bool smooth) {
  if (profile.gap != 1) fail(ErrorKind::input, "select_config: profile must use gap 1");
  const int64_t L = static_cast<int64_t>(profile.distances.size());
  std::vector<double> xs(static_cast<size_t>(L));
  for (int64_t i = 0; i < L; ++i) xs[static_cast<size_t>(i)] = static_cast<double>(i);

  SelectionResult sel;
  sel.forward = kneedle(xs, profile.distances, sensitivity, smooth);
  auto diag = [&]() {
    json d;
    d["forward"] = knee_to_json(sel.forward);
    if (!sel.reverse.difference.empty()) d["reverse"] = knee_to_json(sel.reverse);
    d["distances"] = profile.distances;
    return d.dump();
  };
  if (!sel.forward.knee.has_value())
    fail(ErrorKind::selection, "no forward knee found in the layer profile", diag());
  sel.forward_knee = *sel.forward.knee;
  sel.n_encoder = sel.forward_knee;

  const int64_t tail_len = L - sel.n_encoder;
  if (tail_len < 4)
    fail(ErrorKind::selection,
         "too few layers past the encoder boundary for reverse detection", diag());
  std::vector<double> rev_xs(static_cast<size_t>(tail_len));
  std::vector<double> rev_ys(static_cast<size_t>(tail_len));
  for (int64_t r = 0; r < tail_len; ++r) {
    rev_xs[static_cast<size_t>(r)] = static_cast<double>(r);
    rev_ys[static_cast<size_t>(r)] = profile.distances[static_cast<size_t>(L - 1 - r)];
  }
  sel.reverse = kneedle(rev_xs, rev_ys, sensitivity, smooth);
  if (!sel.reverse.knee.has_value())
    fail(ErrorKind::selection, "no reverse knee found in the layer profile", diag());
  sel.n_decoder = *sel.reverse.knee;
  sel.reverse_knee = static_cast<int>(L - sel.n_decoder);
  sel.n_think = L - sel.n_encoder - sel.n_decoder;
  if (sel.n_think < 1)
    fail(ErrorKind::selection,
         "selected boundaries leave no think block (encoder " + std::to_string(sel.n_encoder) +
             ", decoder " + std::to_string(sel.n_decoder) + ", layers " + std::to_string(L) + ")",
         diag());
  return sel;
}

std::string profile_to_json(const AngularProfile& profile) {
  json j;
  j["gap"] = profile.gap;
  j["distances"] = profile.distances;
  j["sample_count"] = profile.sample_count;
  j["corpus"] = profile.corpus_id;
  return j.dump(2);
}

AngularProfile profile_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::io, "profile is not valid JSON");
  AngularProfile p;
  p.gap = j.at("gap").get<int>();
  p.distances = j.at("distances").get<std::vector<double>>();
  p.sample_count = j.value("sample_count", static_cast<int64_t>(0));
  p.corpus_id = j.value("corpus", std::string{});
  for (double d : p.distances)
    if (!(d >= 0.0 && d <= 1.0)) fail(ErrorKind::input, "profile distance outside [0,1]");
  return p;
}

AngularProfile load_profile(const std::filesystem::path& path) {
  return profile_from_json(read_text(path));
}

void write_profile_json(const std::filesystem::path& path, const AngularProfile& profile) {
  write_text_atomic(path, profile_to_json(profile) + "\n");
}

void write_profile_csv(const std::filesystem::path& path, const AngularProfile& profile) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(17);
  os << "layer,distance\n";
  for (size_t i = 0; i < profile.distances.size(); ++i)
    os << i << ',' << profile.distances[i] << '\n';
  write_text_atomic(path, os.str());
}

std::string selection_to_json(const AngularProfile& profile, const SelectionResult& sel,
                              std::optional<int64_t> iterations) {
  json j;
  j["gap"] = profile.gap;
  j["distances"] = profile.distances;
  j["forward_knee"] = sel.forward_knee;
  j["reverse_knee"] = sel.reverse_knee;
  j["config"] = iterations.has_value() ? sel.partition(*iterations).label()
                                       : sel.partition().label_template();
  j["n_encoder"] = sel.n_encoder;
  j["n_think"] = sel.n_think;
  j["n_decoder"] = sel.n_decoder;
  j["forward_detection"] = knee_to_json(sel.forward);
  j["reverse_detection"] = knee_to_json(sel.reverse);
  return j.dump(2);
}

}  // namespace etdlab
