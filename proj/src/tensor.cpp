#include "etdlab/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "etdlab/kernels.hpp"

namespace etdlab {

namespace {

thread_local Tape* t_current_tape = nullptr;
thread_local int t_no_grad_depth = 0;

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

// b broadcasts onto a when b.shape is a suffix of a.shape.
void check_trailing_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size())
    fail(ErrorKind::dimension, std::string(op) + ": operand of higher rank cannot broadcast, " +
                                   shape_str(sa) + " vs " + shape_str(sb));
  size_t off = sa.size() - sb.size();
  for (size_t i = 0; i < sb.size(); ++i) {
    if (sa[off + i] != sb[i])
      fail(ErrorKind::dimension, std::string(op) + ": shapes not broadcast-compatible, " +
                                     shape_str(sa) + " vs " + shape_str(sb));
  }
}

void check_shape_valid(const Shape& s) {
  for (int64_t d : s)
    if (d <= 0) fail(ErrorKind::dimension, "dimension sizes must be positive: " + shape_str(s));
}

Tensor unary_map(const Tensor& a, double (*f)(double), double (*df)(double),
                 const char* /*name*/) {
  std::vector<double> out(a.data().size());
  std::span<const double> x = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_op(a.shape(), std::move(out), {a}, [f = df](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    if (!(pa.requires_grad || pa.needs_grad)) return;
    pa.ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i) pa.grad[i] += node.grad[i] * f(pa.value[i]);
  });
}

}  // namespace

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::input: return "input";
    case ErrorKind::config: return "config";
    case ErrorKind::usage: return "usage";
    case ErrorKind::io: return "io";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::selection: return "selection";
    case ErrorKind::diverged: return "diverged";
  }
  return "unknown";
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

// ---- Tensor ----------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
  check_shape_valid(shape);
  auto node = std::make_shared<TensorNode>();
  node->value.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double fill) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.node()->value.begin(), t.node()->value.end(), fill);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  check_shape_valid(shape);
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    fail(ErrorKind::dimension, "from_data: " + std::to_string(data.size()) +
                                   " values for shape " + shape_str(shape));
  if (!all_finite(data)) fail(ErrorKind::input, "from_data: non-finite value");
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  return Tensor(std::move(node));
}

Tensor Tensor::param(Shape shape, std::vector<double> data) {
  Tensor t = from_data(std::move(shape), std::move(data));
  t.node()->requires_grad = true;
  return t;
}

double Tensor::item() const {
  if (numel() != 1) fail(ErrorKind::usage, "item(): tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

Tensor Tensor::clone() const {
  auto node = std::make_shared<TensorNode>();
  node->shape = node_->shape;
  node->value = node_->value;
  node->requires_grad = node_->requires_grad;
  return Tensor(std::move(node));
}

// ---- Tape ------------------------------------------------------------

Tape::Tape() {
  if (t_current_tape != nullptr) fail(ErrorKind::usage, "tapes do not nest within a thread");
  t_current_tape = this;
}

Tape::~Tape() { t_current_tape = nullptr; }

Tape* Tape::current() { return t_current_tape; }

void Tape::record(const std::shared_ptr<TensorNode>& node) {
  node->tape = this;
  node->seq = next_seq_++;
  records_.push_back(node);
}

void Tape::backward(const Tensor& loss) {
  if (done_) fail(ErrorKind::usage, "backward already ran on this tape");
  if (loss.numel() != 1) fail(ErrorKind::usage, "backward root must be scalar");
  if (loss.node()->tape != this)
    fail(ErrorKind::usage, "backward root was not recorded on this tape");
  done_ = true;
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    TensorNode& node = **it;
    if (node.backward_fn && !node.grad.empty()) node.backward_fn(node);
  }
}

NoGrad::NoGrad() { ++t_no_grad_depth; }
NoGrad::~NoGrad() { --t_no_grad_depth; }

bool grad_recording_enabled() { return t_no_grad_depth == 0 && t_current_tape != nullptr; }

void accumulate_grad(TensorNode& node, std::span<const double> contrib) {
  node.ensure_grad();
  kernels::active().axpy(node.grad.data(), 1.0, contrib.data(), contrib.size());
}

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward_fn) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  for (const Tensor& p : parents) needs = needs || p.node()->requires_grad || p.node()->needs_grad;
  if (needs && grad_recording_enabled()) {
    node->needs_grad = true;
    node->parents.reserve(parents.size());
    for (Tensor& p : parents) node->parents.push_back(p.node_ptr());
    node->backward_fn = std::move(backward_fn);
    Tape::current()->record(node);
  }
  return Tensor(std::move(node));
}

void zero_grad(std::span<Tensor* const> params) {
  for (Tensor* p : params) p->clear_grad();
}

// ---- ops ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2)
    fail(ErrorKind::dimension, "matmul: need a rank>=2 and b rank 2, got " +
                                   shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t k = a.shape()[a.rank() - 1];
  const int64_t m = a.shape()[a.rank() - 2];
  if (b.shape()[0] != k)
    fail(ErrorKind::dimension,
         "matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t n = b.shape()[1];
  const int64_t batches = a.numel() / (m * k);

  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<double> out(static_cast<size_t>(batches * m * n));
  const auto& K = kernels::active();
  for (int64_t s = 0; s < batches; ++s) {
    K.matmul_nn(out.data() + s * m * n, a.data().data() + s * m * k, b.data().data(),
                static_cast<size_t>(m), static_cast<size_t>(k), static_cast<size_t>(n));
  }

  return make_op(std::move(out_shape), std::move(out), {a, b},
                 [m, k, n, batches](TensorNode& node) {
                   const auto& K = kernels::active();
                   TensorNode& pa = *node.parents[0];
                   TensorNode& pb = *node.parents[1];
                   if (pa.requires_grad || pa.needs_grad) {
                     pa.ensure_grad();
                     std::vector<double> scratch(static_cast<size_t>(m * k));
                     for (int64_t s = 0; s < batches; ++s) {
                       // dA = dOut * B^T
                       K.matmul_nt(scratch.data(), node.grad.data() + s * m * n, pb.value.data(),
                                   static_cast<size_t>(m), static_cast<size_t>(n),
                                   static_cast<size_t>(k));
                       K.axpy(pa.grad.data() + s * m * k, 1.0, scratch.data(), scratch.size());
                     }
                   }
                   if (pb.requires_grad || pb.needs_grad) {
                     pb.ensure_grad();
                     std::vector<double> scratch(static_cast<size_t>(k * n));
                     for (int64_t s = 0; s < batches; ++s) {
                       // dB += A^T * dOut, accumulated over batches
                       K.matmul_tn(scratch.data(), pa.value.data() + s * m * k,
                                   node.grad.data() + s * m * n, static_cast<size_t>(m),
                                   static_cast<size_t>(k), static_cast<size_t>(n));
                       K.axpy(pb.grad.data(), 1.0, scratch.data(), scratch.size());
                     }
                   }
                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_trailing_broadcast(a, b, "add");
  const int64_t bn = b.numel();
  const int64_t rows = a.numel() / bn;
  std::vector<double> out(a.data().size());
  const auto& K = kernels::active();
  for (int64_t r = 0; r < rows; ++r)
    K.add(out.data() + r * bn, a.data().data() + r * bn, b.data().data(), static_cast<size_t>(bn));
  return make_op(a.shape(), std::move(out), {a, b}, [bn, rows](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    TensorNode& pb = *node.parents[1];
    if (pa.requires_grad || pa.needs_grad) accumulate_grad(pa, node.grad);
    if (pb.requires_grad || pb.needs_grad) {
      pb.ensure_grad();
      const auto& K = kernels::active();
      for (int64_t r = 0; r < rows; ++r)
        K.axpy(pb.grad.data(), 1.0, node.grad.data() + r * bn, static_cast<size_t>(bn));
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_trailing_broadcast(a, b, "mul");
  const int64_t bn = b.numel();
  const int64_t rows = a.numel() / bn;
  std::vector<double> out(a.data().size());
  const auto& K = kernels::active();
  for (int64_t r = 0; r < rows; ++r)
    K.mul(out.data() + r * bn, a.data().data() + r * bn, b.data().data(), static_cast<size_t>(bn));
  return make_op(a.shape(), std::move(out), {a, b}, [bn, rows](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    TensorNode& pb = *node.parents[1];
    if (pa.requires_grad || pa.needs_grad) {
      pa.ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < bn; ++i)
          pa.grad[r * bn + i] += node.grad[r * bn + i] * pb.value[i];
    }
    if (pb.requires_grad || pb.needs_grad) {
      pb.ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < bn; ++i)
          pb.grad[i] += node.grad[r * bn + i] * pa.value[r * bn + i];
    }
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data().size());
  kernels::active().scale(out.data(), a.data().data(), c, out.size());
  return make_op(a.shape(), std::move(out), {a}, [c](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    if (!(pa.requires_grad || pa.needs_grad)) return;
    pa.ensure_grad();
    kernels::active().axpy(pa.grad.data(), c, node.grad.data(), node.grad.size());
  });
}

Tensor silu(const Tensor& a) {
  return unary_map(
      a, [](double x) { return x * stable_sigmoid(x); },
      [](double x) {
        double s = stable_sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      },
      "silu");
}

Tensor gelu(const Tensor& a) {
  return unary_map(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); },
      [](double x) {
        double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
        double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
      },
      "gelu");
}

Tensor sigmoid(const Tensor& a) {
  return unary_map(
      a, [](double x) { return stable_sigmoid(x); },
      [](double x) {
        double s = stable_sigmoid(x);
        return s * (1.0 - s);
      },
      "sigmoid");
}

Tensor softmax_rows(const Tensor& a) {
  if (a.rank() < 1) fail(ErrorKind::dimension, "softmax_rows: rank >= 1 required");
  const int64_t n = a.shape().back();
  const int64_t rows = a.numel() / n;
  std::vector<double> out(a.data().size());
  std::span<const double> x = a.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * n;
    double* orow = out.data() + r * n;
    double mx = row[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    double z = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      orow[i] = std::exp(row[i] - mx);
      z += orow[i];
    }
    double inv = 1.0 / z;
    for (int64_t i = 0; i < n; ++i) orow[i] *= inv;
  }
  return make_op(a.shape(), std::move(out), {a}, [n, rows](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    if (!(pa.requires_grad || pa.needs_grad)) return;
    pa.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* p = node.value.data() + r * n;
      const double* g = node.grad.data() + r * n;
      double dotpg = kernels::active().dot(p, g, static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) pa.grad[r * n + i] += p[i] * (g[i] - dotpg);
    }
  });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  if (gain.rank() != 1) fail(ErrorKind::dimension, "rms_norm: gain must be rank 1");
  const int64_t d = gain.numel();
  if (x.shape().back() != d)
    fail(ErrorKind::dimension, "rms_norm: trailing dim " + std::to_string(x.shape().back()) +
                                   " vs gain length " + std::to_string(d));
  if (!(eps > 0.0)) fail(ErrorKind::input, "rms_norm: eps must be > 0");
  const int64_t rows = x.numel() / d;
  std::vector<double> out(x.data().size());
  std::vector<double> inv_rms(static_cast<size_t>(rows));
  const auto& K = kernels::active();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = x.data().data() + r * d;
    double ms = K.sum_sq(row, static_cast<size_t>(d)) / static_cast<double>(d);
    double inv = 1.0 / std::sqrt(ms + eps);
    inv_rms[static_cast<size_t>(r)] = inv;
    double* orow = out.data() + r * d;
    for (int64_t i = 0; i < d; ++i) orow[i] = row[i] * inv * gain.data()[i];
  }
  return make_op(x.shape(), std::move(out), {x, gain},
                 [d, rows, inv = std::move(inv_rms)](TensorNode& node) {
                   TensorNode& px = *node.parents[0];
                   TensorNode& pg = *node.parents[1];
                   const bool wx = px.requires_grad || px.needs_grad;
                   const bool wg = pg.requires_grad || pg.needs_grad;
                   if (wx) px.ensure_grad();
                   if (wg) pg.ensure_grad();
                   for (int64_t r = 0; r < rows; ++r) {
                     const double* xr = px.value.data() + r * d;
                     const double* gr = node.grad.data() + r * d;
                     const double rr = inv[static_cast<size_t>(r)];
                     if (wg) {
                       for (int64_t i = 0; i < d; ++i) pg.grad[i] += gr[i] * xr[i] * rr;
                     }
                     if (wx) {
                       double s = 0.0;  // sum_i g_i * gain_i * x_i
                       for (int64_t i = 0; i < d; ++i) s += gr[i] * pg.value[i] * xr[i];
                       const double c = rr * rr * rr * s / static_cast<double>(d);
                       for (int64_t i = 0; i < d; ++i)
                         px.grad[r * d + i] += rr * gr[i] * pg.value[i] - c * xr[i];
                     }
                   }
                 });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int32_t> targets,
                     std::span<const uint8_t> mask) {
  if (logits.rank() < 2) fail(ErrorKind::dimension, "cross_entropy: logits rank >= 2 required");
  const int64_t v = logits.shape().back();
  const int64_t positions = logits.numel() / v;
  if (static_cast<int64_t>(targets.size()) != positions ||
      static_cast<int64_t>(mask.size()) != positions)
    fail(ErrorKind::dimension, "cross_entropy: targets/mask length must equal position count");
  double total = 0.0;
  int64_t count = 0;
  std::vector<double> lse(static_cast<size_t>(positions), 0.0);
  for (int64_t p = 0; p < positions; ++p) {
    if (!mask[static_cast<size_t>(p)]) continue;
    const int32_t t = targets[static_cast<size_t>(p)];
    if (t < 0 || t >= v)
      fail(ErrorKind::input, "cross_entropy: target " + std::to_string(t) + " outside [0," +
                                 std::to_string(v) + ")");
    const double* row = logits.data().data() + p * v;
    double mx = row[0];
    for (int64_t i = 1; i < v; ++i) mx = std::max(mx, row[i]);
    double z = 0.0;
    for (int64_t i = 0; i < v; ++i) z += std::exp(row[i] - mx);
    const double l = mx + std::log(z);
    lse[static_cast<size_t>(p)] = l;
    total += l - row[t];
    ++count;
  }
  if (count == 0) fail(ErrorKind::input, "cross_entropy: mask selects no positions");
  const double loss = total / static_cast<double>(count);
  if (!std::isfinite(loss)) fail(ErrorKind::diverged, "cross_entropy: non-finite loss");
  std::vector<int32_t> tcopy(targets.begin(), targets.end());
  std::vector<uint8_t> mcopy(mask.begin(), mask.end());
  return make_op(
      {1}, {loss}, {logits},
      [v, positions, count, lse = std::move(lse), tv = std::move(tcopy),
       mv = std::move(mcopy)](TensorNode& node) {
        TensorNode& pl = *node.parents[0];
        if (!(pl.requires_grad || pl.needs_grad)) return;
        pl.ensure_grad();
        const double coeff = node.grad[0] / static_cast<double>(count);
        for (int64_t p = 0; p < positions; ++p) {
          if (!mv[static_cast<size_t>(p)]) continue;
          const double* row = pl.value.data() + p * v;
          double* grow = pl.grad.data() + p * v;
          const double l = lse[static_cast<size_t>(p)];
          for (int64_t i = 0; i < v; ++i) grow[i] += coeff * std::exp(row[i] - l);
          grow[tv[static_cast<size_t>(p)]] -= coeff;
        }
      });
}

Tensor sum(const Tensor& a) {
  // Fixed 4-lane blocked order, same as the kernel reductions.
  std::span<const double> x = a.data();
  double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
  size_t i = 0;
  const size_t n4 = x.size() & ~size_t(3);
  for (; i < n4; i += 4) {
    acc0 += x[i];
    acc1 += x[i + 1];
    acc2 += x[i + 2];
    acc3 += x[i + 3];
  }
  double s = (acc0 + acc2) + (acc1 + acc3);
  for (; i < x.size(); ++i) s += x[i];
  return make_op({1}, {s}, {a}, [](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    if (!(pa.requires_grad || pa.needs_grad)) return;
    pa.ensure_grad();
    const double g = node.grad[0];
    for (double& v : pa.grad) v += g;
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_shape_valid(shape);
  if (shape_numel(shape) != a.numel())
    fail(ErrorKind::dimension, "reshape: element count mismatch " + shape_str(a.shape()) +
                                   " -> " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op(std::move(shape), std::move(out), {a}, [](TensorNode& node) {
    TensorNode& pa = *node.parents[0];
    if (!(pa.requires_grad || pa.needs_grad)) return;
    accumulate_grad(pa, node.grad);
  });
}

Tensor embed_lookup(const Tensor& table, std::span<const int32_t> ids, int64_t batch,
                    int64_t seq) {
  if (table.rank() != 2) fail(ErrorKind::dimension, "embed_lookup: table must be rank 2");
  const int64_t v = table.size(0);
  const int64_t d = table.size(1);
  if (static_cast<int64_t>(ids.size()) != batch * seq)
    fail(ErrorKind::dimension, "embed_lookup: ids length != batch*seq");
  for (int32_t id : ids)
    if (id < 0 || id >= v)
      fail(ErrorKind::input,
           "embed_lookup: token " + std::to_string(id) + " outside [0," + std::to_string(v) + ")");
  std::vector<double> out(static_cast<size_t>(batch * seq * d));
  for (int64_t p = 0; p < batch * seq; ++p) {
    const double* row = table.data().data() + static_cast<int64_t>(ids[static_cast<size_t>(p)]) * d;
    std::copy(row, row + d, out.data() + p * d);
  }
  std::vector<int32_t> idcopy(ids.begin(), ids.end());
  return make_op({batch, seq, d}, std::move(out), {table},
                 [d, ids = std::move(idcopy)](TensorNode& node) {
                   TensorNode& pt = *node.parents[0];
                   if (!(pt.requires_grad || pt.needs_grad)) return;
                   pt.ensure_grad();
                   const auto& K = kernels::active();
                   for (size_t p = 0; p < ids.size(); ++p) {
                     K.axpy(pt.grad.data() + static_cast<int64_t>(ids[p]) * d, 1.0,
                            node.grad.data() + static_cast<int64_t>(p) * d, static_cast<size_t>(d));
                   }
                 });
}

Tensor where_rows(std::span<const uint8_t> keep_a, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    fail(ErrorKind::dimension,
         "where_rows: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int64_t d = a.shape().back();
  const int64_t rows = a.numel() / d;
  if (static_cast<int64_t>(keep_a.size()) != rows)
    fail(ErrorKind::dimension, "where_rows: mask length != row count");
  std::vector<double> out(a.data().size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = (keep_a[static_cast<size_t>(r)] ? a.data().data() : b.data().data()) + r * d;
    std::copy(src, src + d, out.data() + r * d);
  }
  std::vector<uint8_t> mcopy(keep_a.begin(), keep_a.end());
  return make_op(a.shape(), std::move(out), {a, b},
                 [d, rows, m = std::move(mcopy)](TensorNode& node) {
                   TensorNode& pa = *node.parents[0];
                   TensorNode& pb = *node.parents[1];
                   const bool wa = pa.requires_grad || pa.needs_grad;
                   const bool wb = pb.requires_grad || pb.needs_grad;
                   if (wa) pa.ensure_grad();
                   if (wb) pb.ensure_grad();
                   const auto& K = kernels::active();
                   for (int64_t r = 0; r < rows; ++r) {
                     if (m[static_cast<size_t>(r)]) {
                       if (wa)
                         K.axpy(pa.grad.data() + r * d, 1.0, node.grad.data() + r * d,
                                static_cast<size_t>(d));
                     } else if (wb) {
                       K.axpy(pb.grad.data() + r * d, 1.0, node.grad.data() + r * d,
                              static_cast<size_t>(d));
                     }
                   }
                 });
}

}  // namespace etdlab
