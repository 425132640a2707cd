#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ctxasr/rng.hpp"

namespace ctxasr {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

// One vertex of the per-step computation graph. Graphs are rebuilt on every
// forward pass; `backward` reads this node's grad and accumulates into the
// parents' grads.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on demand, same length as value
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

bool grad_enabled();

}  // namespace detail

// Disables graph construction in scope (forward evaluation only).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Dense double-precision tensor with optional gradient buffer. Value
// semantics over a shared node; cheap to copy. Tensors are immutable after
// construction except for grad accumulation during backward and in-place
// parameter updates between steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = true);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(n_->value.size()); }

  std::span<const double> values() const { return n_->value; }
  // In-place mutation; valid only for leaves between steps (optimizer
  // updates, finite-difference probes).
  std::span<double> values_mut() { return n_->value; }

  bool requires_grad() const { return n_->requires_grad; }
  std::span<const double> grad() const { return n_->grad; }
  void zero_grad() {
    if (n_) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
  }
  void ensure_grad() { n_->ensure_grad(); }

  double item() const;
  bool all_finite() const;

  // Forward-only copy detached from the graph.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return n_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> n_;
};

// ---- elementwise / linear algebra ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
// x: [R x C], row: [C] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& row);
// C = A * B, A: [m x k], B: [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
// C = A * B^T, A: [m x k], B: [n x k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// out[(i*B + j), :] = a[i, :] + b[j, :]; a: [A x d], b: [B x d].
Tensor pairwise_add_rows(const Tensor& a, const Tensor& b);

// ---- shape ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int begin, int end);
Tensor slice_cols(const Tensor& x, int begin, int end);

// ---- normalization / activation ----
// Softmax along `axis`; axis -1 means the innermost dimension. For rank-2
// tensors axis 0 is also supported. Numerically stabilized by max
// subtraction.
Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x, int axis = -1);
// Row-wise layer norm; gain/bias: [C].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-6);
Tensor gelu(const Tensor& x);

// ---- reductions / indexing ----
struct MaxPool {
  Tensor values;
  std::vector<int> argmax;  // winning index along the pooled axis, ties to lowest
};
// Max over `axis` of a rank-2 tensor; backward routes gradient only to the
// argmax positions.
MaxPool max_pool_axis(const Tensor& x, int axis);

Tensor sum_all(const Tensor& x);
Tensor mean_rows(const Tensor& x);  // [R x C] -> [1 x C]
Tensor pick(const Tensor& x, std::int64_t flat_index);  // -> [1]

// Gather rows of `table` ([V x d]) at `ids`; backward scatter-adds.
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

// Replace masked rows of x ([R x C]) with `fill_row` ([C]); gradient for a
// masked row flows to fill_row, otherwise to x.
Tensor masked_fill_rows(const Tensor& x, const std::vector<std::uint8_t>& row_mask,
                        const Tensor& fill_row);

// Reverse pass from a scalar loss in topological order.
void backward(const Tensor& loss);

[[noreturn]] void fail(const std::string& msg);

}  // namespace ctxasr
