#pragma once

#include <functional>
#include <memory>
#include <span>

#include "etdlab/common.hpp"

namespace etdlab {

class Tape;

/// Node in the computation graph. Values are dense row-major f64; all stored
/// values are finite by construction (non-finite input is rejected, and a
/// non-finite loss is surfaced as an error by the training loop).
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool needs_grad = false;  // downstream of something that requires grad
  Tape* tape = nullptr;
  uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

/// Shared handle onto a TensorNode. Copies alias the same storage; ops
/// produce fresh nodes.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double fill);
  static Tensor from_data(Shape shape, std::vector<double> data);
  /// Leaf with requires_grad set; the usual way to make a trainable weight.
  static Tensor param(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t size(int dim) const { return node_->shape.at(static_cast<size_t>(dim)); }
  int64_t numel() const { return node_->numel(); }

  std::span<const double> data() const { return node_->value; }
  /// Direct mutation; valid only for leaves between tapes (optimizer, tests).
  std::span<double> raw_data() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> raw_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void clear_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  double item() const;
  Tensor clone() const;  // deep copy of values; keeps requires_grad, drops grad

  TensorNode* node() const { return node_.get(); }
  std::shared_ptr<TensorNode> node_ptr() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Ordered record of differentiable operations. Constructing a Tape makes it
/// the active tape for the current thread; ops executed while it is active
/// are recorded in execution order, which is a valid topological order.
/// backward() walks the record exactly once in reverse. One tape per thread;
/// tapes do not nest.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Populates grads of everything reachable from `loss`. `loss` must be a
  /// scalar recorded on this tape; calling twice is an error.
  void backward(const Tensor& loss);

  std::size_t recorded() const { return records_.size(); }
  bool backward_done() const { return done_; }

  static Tape* current();
  void record(const std::shared_ptr<TensorNode>& node);

 private:
  std::vector<std::shared_ptr<TensorNode>> records_;
  uint64_t next_seq_ = 1;
  bool done_ = false;
};

/// Scope that suspends gradient recording (forward-only evaluation).
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

bool grad_recording_enabled();

// ---- ops -------------------------------------------------------------

/// c[..,m,n] = a[..,m,k] * b[k,n]; b is 2-D, leading dims of a batch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise with trailing-dimension broadcast: b's shape must equal a
/// suffix of a's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor silu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

/// Softmax over the last dimension, stabilized by max subtraction.
Tensor softmax_rows(const Tensor& a);

/// x / sqrt(mean(x^2) + eps) * gain, over the last dimension.
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);

/// Mean negative log-likelihood over positions where mask != 0.
/// logits [.., V]; targets/mask flat, one entry per position.
Tensor cross_entropy(const Tensor& logits, std::span<const int32_t> targets,
                     std::span<const uint8_t> mask);

Tensor sum(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// out[p, :] = table[ids[p], :] for p in [0, batch*seq).
Tensor embed_lookup(const Tensor& table, std::span<const int32_t> ids,
                    int64_t batch, int64_t seq);

/// Row-wise select over the last dimension: out row = keep_a ? a row : b row.
Tensor where_rows(std::span<const uint8_t> keep_a, const Tensor& a, const Tensor& b);

/// Escape hatch for fused ops with hand-written backward passes.
Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward_fn);

/// Adds `contrib` into `node.grad`, allocating lazily. For backward_fn use.
void accumulate_grad(TensorNode& node, std::span<const double> contrib);

void zero_grad(std::span<Tensor* const> params);

bool all_finite(std::span<const double> xs);

}  // namespace etdlab
