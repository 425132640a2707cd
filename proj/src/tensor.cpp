#include "ctxasr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace ctxasr {

namespace {

thread_local int g_no_grad_depth = 0;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr make_node(Shape shape, const char* op) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->value.resize(static_cast<std::size_t>(shape_numel(shape)), 0.0);
  n->shape = std::move(shape);
  return n;
}

bool any_requires(std::initializer_list<const Tensor*> ts) {
  if (!detail::grad_enabled()) return false;
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

// Wire parents + closure only when gradients are being tracked.
void attach(const NodePtr& out, std::vector<NodePtr> parents,
            std::function<void(Node&)> fn) {
  out->requires_grad = true;
  out->parents = std::move(parents);
  out->backward = std::move(fn);
}

int rows_of(const Tensor& t) {
  return t.rank() == 1 ? 1 : t.dim(0);
}
int cols_of(const Tensor& t) {
  return t.rank() == 1 ? t.dim(0) : t.dim(1);
}

void check_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) fail(std::string(op) + ": expected rank-2 tensor, got shape " + shape_str(t.shape()));
}

}  // namespace

namespace detail {
bool grad_enabled() { return g_no_grad_depth == 0; }
}  // namespace detail

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) fail("non-positive dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

void fail(const std::string& msg) { throw std::runtime_error(msg); }

Tensor Tensor::wrap(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.n_ = std::move(n);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = make_node(std::move(shape), "leaf");
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.n_->value.begin(), t.n_->value.end(), v);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
    fail("Tensor::from: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  auto n = make_node(std::move(shape), "leaf");
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.n_->value) v = rng.normal(0.0, stddev);
  return t;
}

double Tensor::item() const {
  if (size() != 1) fail("item(): tensor has " + std::to_string(size()) + " elements");
  return n_->value[0];
}

bool Tensor::all_finite() const {
  for (double v : n_->value)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::detach() const {
  return from(n_->shape, n_->value, false);
}

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    fail("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = make_node(a.shape(), "add");
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + bv[i];
  if (any_requires({&a, &b})) {
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    attach(out, {a.node(), b.node()}, [pa, pb](Node& n) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i];
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    fail("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = make_node(a.shape(), "mul");
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * bv[i];
  if (any_requires({&a, &b})) {
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    attach(out, {a.node(), b.node()}, [pa, pb](Node& n) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->value[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->value[i];
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor scale(const Tensor& x, double c) {
  auto out = make_node(x.shape(), "scale");
  const auto& xv = x.node()->value;
  for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = xv[i] * c;
  if (any_requires({&x})) {
    Node* px = x.node().get();
    attach(out, {x.node()}, [px, c](Node& n) {
      px->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) px->grad[i] += n.grad[i] * c;
    });
  }
  return Tensor::wrap(out);
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  const int r = rows_of(x), c = cols_of(x);
  if (row.size() != c)
    fail("add_row: row " + shape_str(row.shape()) + " vs x " + shape_str(x.shape()));
  auto out = make_node(x.shape(), "add_row");
  const double* xv = x.node()->value.data();
  const double* rv = row.node()->value.data();
  double* ov = out->value.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) ov[i * c + j] = xv[i * c + j] + rv[j];
  if (any_requires({&x, &row})) {
    Node* px = x.node().get();
    Node* pr = row.node().get();
    attach(out, {x.node(), row.node()}, [px, pr, r, c](Node& n) {
      if (px->requires_grad) {
        px->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) px->grad[i] += n.grad[i];
      }
      if (pr->requires_grad) {
        pr->ensure_grad();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) pr->grad[j] += n.grad[static_cast<std::size_t>(i) * c + j];
      }
    });
  }
  return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// matmul

namespace {

// C += A(m x k) * B(k x n), row-major, ikj order.
void mm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C += A(m x k) * B(n x k)^T
void mm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// C += A(k x m)^T * B(k x n)
void mm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const double* ap = a + static_cast<std::size_t>(p) * m;
    const double* bp = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    fail("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  auto out = make_node({m, n}, "matmul");
  mm_acc(a.node()->value.data(), b.node()->value.data(), out->value.data(), m, k, n);
  if (any_requires({&a, &b})) {
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    attach(out, {a.node(), b.node()}, [pa, pb, m, k, n](Node& nd) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        // dA = dC * B^T
        mm_nt_acc(nd.grad.data(), pb->value.data(), pa->grad.data(), m, n, k);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        // dB = A^T * dC
        mm_tn_acc(pa->value.data(), nd.grad.data(), pb->grad.data(), k, m, n);
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul_nt");
  check_rank2(b, "matmul_nt");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (k != b.dim(1))
    fail("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  auto out = make_node({m, n}, "matmul_nt");
  mm_nt_acc(a.node()->value.data(), b.node()->value.data(), out->value.data(), m, k, n);
  if (any_requires({&a, &b})) {
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    attach(out, {a.node(), b.node()}, [pa, pb, m, k, n](Node& nd) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        // dA = dC * B
        mm_acc(nd.grad.data(), pb->value.data(), pa->grad.data(), m, n, k);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        // dB = dC^T * A
        mm_tn_acc(nd.grad.data(), pa->value.data(), pb->grad.data(), n, m, k);
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor pairwise_add_rows(const Tensor& a, const Tensor& b) {
  check_rank2(a, "pairwise_add_rows");
  check_rank2(b, "pairwise_add_rows");
  const int ra = a.dim(0), rb = b.dim(0), d = a.dim(1);
  if (d != b.dim(1))
    fail("pairwise_add_rows: column mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = make_node({ra * rb, d}, "pairwise_add_rows");
  const double* av = a.node()->value.data();
  const double* bv = b.node()->value.data();
  double* ov = out->value.data();
  for (int i = 0; i < ra; ++i)
    for (int j = 0; j < rb; ++j) {
      const double* x = av + static_cast<std::size_t>(i) * d;
      const double* y = bv + static_cast<std::size_t>(j) * d;
      double* o = ov + (static_cast<std::size_t>(i) * rb + j) * d;
      for (int c = 0; c < d; ++c) o[c] = x[c] + y[c];
    }
  if (any_requires({&a, &b})) {
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    attach(out, {a.node(), b.node()}, [pa, pb, ra, rb, d](Node& n) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (int i = 0; i < ra; ++i) {
          double* g = pa->grad.data() + static_cast<std::size_t>(i) * d;
          for (int j = 0; j < rb; ++j) {
            const double* og = n.grad.data() + (static_cast<std::size_t>(i) * rb + j) * d;
            for (int c = 0; c < d; ++c) g[c] += og[c];
          }
        }
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int i = 0; i < ra; ++i)
          for (int j = 0; j < rb; ++j) {
            double* g = pb->grad.data() + static_cast<std::size_t>(j) * d;
            const double* og = n.grad.data() + (static_cast<std::size_t>(i) * rb + j) * d;
            for (int c = 0; c < d; ++c) g[c] += og[c];
          }
      }
    });
  }
  return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// shape ops

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    fail("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto out = make_node(shape, "reshape");
  out->value = x.node()->value;
  if (any_requires({&x})) {
    Node* px = x.node().get();
    attach(out, {x.node()}, [px](Node& n) {
      px->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) px->grad[i] += n.grad[i];
    });
  }
  return Tensor::wrap(out);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_rows: empty input");
  int cols = cols_of(parts[0]);
  int rows = 0;
  for (const Tensor& p : parts) {
    if (cols_of(p) != cols)
      fail("concat_rows: column mismatch " + shape_str(p.shape()));
    rows += rows_of(p);
  }
  auto out = make_node({rows, cols}, "concat_rows");
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const auto& v = p.node()->value;
    std::copy(v.begin(), v.end(), out->value.begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
  }
  bool need = false;
  for (const Tensor& p : parts) need = need || p.requires_grad();
  if (need && detail::grad_enabled()) {
    std::vector<NodePtr> parents;
    parents.reserve(parts.size());
    for (const Tensor& p : parts) parents.push_back(p.node());
    attach(out, std::move(parents), [](Node& n) {
      std::size_t off2 = 0;
      for (auto& par : n.parents) {
        const std::size_t len = par->value.size();
        if (par->requires_grad) {
          par->ensure_grad();
          for (std::size_t i = 0; i < len; ++i) par->grad[i] += n.grad[off2 + i];
        }
        off2 += len;
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_cols: empty input");
  const int rows = parts[0].dim(0);
  int cols = 0;
  for (const Tensor& p : parts) {
    check_rank2(p, "concat_cols");
    if (p.dim(0) != rows) fail("concat_cols: row mismatch " + shape_str(p.shape()));
    cols += p.dim(1);
  }
  auto out = make_node({rows, cols}, "concat_cols");
  int coff = 0;
  for (const Tensor& p : parts) {
    const int pc = p.dim(1);
    const double* v = p.node()->value.data();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < pc; ++j)
        out->value[static_cast<std::size_t>(i) * cols + coff + j] = v[static_cast<std::size_t>(i) * pc + j];
    coff += pc;
  }
  bool need = false;
  for (const Tensor& p : parts) need = need || p.requires_grad();
  if (need && detail::grad_enabled()) {
    std::vector<NodePtr> parents;
    for (const Tensor& p : parts) parents.push_back(p.node());
    attach(out, std::move(parents), [rows, cols](Node& n) {
      int coff2 = 0;
      for (auto& par : n.parents) {
        const int pc = par->shape[1];
        if (par->requires_grad) {
          par->ensure_grad();
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < pc; ++j)
              par->grad[static_cast<std::size_t>(i) * pc + j] +=
                  n.grad[static_cast<std::size_t>(i) * cols + coff2 + j];
        }
        coff2 += pc;
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor slice_rows(const Tensor& x, int begin, int end) {
  check_rank2(x, "slice_rows");
  const int r = x.dim(0), c = x.dim(1);
  if (begin < 0 || end > r || begin >= end)
    fail("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + shape_str(x.shape()));
  auto out = make_node({end - begin, c}, "slice_rows");
  const double* v = x.node()->value.data() + static_cast<std::size_t>(begin) * c;
  std::copy(v, v + out->value.size(), out->value.begin());
  if (any_requires({&x})) {
    Node* px = x.node().get();
    attach(out, {x.node()}, [px, begin, c](Node& n) {
      px->ensure_grad();
      double* g = px->grad.data() + static_cast<std::size_t>(begin) * c;
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    });
  }
  return Tensor::wrap(out);
}

Tensor slice_cols(const Tensor& x, int begin, int end) {
  check_rank2(x, "slice_cols");
  const int r = x.dim(0), c = x.dim(1);
  if (begin < 0 || end > c || begin >= end)
    fail("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + shape_str(x.shape()));
  const int w = end - begin;
  auto out = make_node({r, w}, "slice_cols");
  const double* v = x.node()->value.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < w; ++j)
      out->value[static_cast<std::size_t>(i) * w + j] = v[static_cast<std::size_t>(i) * c + begin + j];
  if (any_requires({&x})) {
    Node* px = x.node().get();
    attach(out, {x.node()}, [px, begin, r, c, w](Node& n) {
      px->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < w; ++j)
          px->grad[static_cast<std::size_t>(i) * c + begin + j] += n.grad[static_cast<std::size_t>(i) * w + j];
    });
  }
  return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// softmax family

namespace {

struct AxisView {
  // View a tensor as `outer` slices of length `len` with stride `stride`,
  // where slice s starts at base(s).
  std::int64_t outer = 0;
  int len = 0;
  std::int64_t stride = 0;
  std::int64_t block = 0;  // elements between consecutive outer groups
  std::int64_t inner = 0;

  std::int64_t base(std::int64_t s) const {
    return (s / inner) * block + (s % inner);
  }
};

AxisView axis_view(const Shape& shape, int axis) {
  const int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) fail("softmax: bad axis");
  AxisView v;
  v.len = shape[static_cast<std::size_t>(axis)];
  std::int64_t inner = 1;
  for (int i = axis + 1; i < rank; ++i) inner *= shape[static_cast<std::size_t>(i)];
  std::int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  v.inner = inner;
  v.stride = inner;
  v.block = inner * v.len;
  v.outer = outer * inner;
  return v;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis);
  auto out = make_node(x.shape(), "softmax");
  const double* xv = x.node()->value.data();
  double* ov = out->value.data();
  for (std::int64_t s = 0; s < v.outer; ++s) {
    const std::int64_t b = v.base(s);
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < v.len; ++i) mx = std::max(mx, xv[b + i * v.stride]);
    double sum = 0.0;
    for (int i = 0; i < v.len; ++i) {
      const double e = std::exp(xv[b + i * v.stride] - mx);
      ov[b + i * v.stride] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int i = 0; i < v.len; ++i) ov[b + i * v.stride] *= inv;
  }
  if (any_requires({&x})) {
    Node* px = x.node().get();
    attach(out, {x.node()}, [px, v](Node& n) {
      px->ensure_grad();
      for (std::int64_t s = 0; s < v.outer; ++s) {
        const std::int64_t b = v.base(s);
        double dot = 0.0;
        for (int i = 0; i < v.len; ++i)
          dot += n.grad[b + i * v.stride] * n.value[b + i * v.stride];
        for (int i = 0; i < v.len; ++i) {
          const std::int64_t ix = b + i * v.stride;
          px->grad[ix] += n.value[ix] * (n.grad[ix] - dot);
        }
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor log_softmax(const Tensor& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis);
  auto out = make_node(x.shape(), "log_softmax");
  const double* xv = x.node()->value.data();
  double* ov = out->value.data();
  for (std::int64_t s = 0; s < v.outer; ++s) {
    const std::int64_t b = v.base(s);
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < v.len; ++i) mx = std::max(mx, xv[b + i * v.stride]);
    double sum = 0.0;
    for (int i = 0; i < v.len; ++i) sum += std::exp(xv[b + i * v.stride] - mx);
    const double lse = mx + std::log(sum);
    for (int i = 0; i < v.len; ++i) ov[b + i * v.stride] = xv[b + i * v.stride] - lse;
  }
  if (any_requires({&x})) {
    Node* px = x.node().get();
    attach(out, {x.node()}, [px, v](Node& n) {
      px->ensure_grad();
      for (std::int64_t s = 0; s < v.outer; ++s) {
        const std::int64_t b = v.base(s);
        double gsum = 0.0;
        for (int i = 0; i < v.len; ++i) gsum += n.grad[b + i * v.stride];
        for (int i = 0; i < v.len; ++i) {
          const std::int64_t ix = b + i * v.stride;
          px->grad[ix] += n.grad[ix] - std::exp(n.value[ix]) * gsum;
        }
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const int r = rows_of(x), c = cols_of(x);
  if (gain.size() != c || bias.size() != c)
    fail("layer_norm: gain/bias must be [" + std::to_string(c) + "]");
  auto out = make_node(x.shape(), "layer_norm");
  const double* xv = x.node()->value.data();
  const double* gv = gain.node()->value.data();
  const double* bv = bias.node()->value.data();
  double* ov = out->value.data();
  std::vector<double> xhat(static_cast<std::size_t>(r) * c);
  std::vector<double> inv_std(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const double* row = xv + static_cast<std::size_t>(i) * c;
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += row[j];
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < c; ++j) {
      const double xh = (row[j] - mean) * is;
      xhat[static_cast<std::size_t>(i) * c + j] = xh;
      ov[static_cast<std::size_t>(i) * c + j] = xh * gv[j] + bv[j];
    }
  }
  if (any_requires({&x, &gain, &bias})) {
    Node* px = x.node().get();
    Node* pg = gain.node().get();
    Node* pb = bias.node().get();
    attach(out, {x.node(), gain.node(), bias.node()},
           [px, pg, pb, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
             if (pg->requires_grad) pg->ensure_grad();
             if (pb->requires_grad) pb->ensure_grad();
             if (px->requires_grad) px->ensure_grad();
             for (int i = 0; i < r; ++i) {
               const double* g = n.grad.data() + static_cast<std::size_t>(i) * c;
               const double* xh = xhat.data() + static_cast<std::size_t>(i) * c;
               if (pg->requires_grad)
                 for (int j = 0; j < c; ++j) pg->grad[j] += g[j] * xh[j];
               if (pb->requires_grad)
                 for (int j = 0; j < c; ++j) pb->grad[j] += g[j];
               if (px->requires_grad) {
                 // dx = (gy - mean(gy) - xhat * mean(gy * xhat)) * inv_std
                 double m1 = 0.0, m2 = 0.0;
                 for (int j = 0; j < c; ++j) {
                   const double gy = g[j] * pg->value[j];
                   m1 += gy;
                   m2 += gy * xh[j];
                 }
                 m1 /= c;
                 m2 /= c;
                 const double is = inv_std[static_cast<std::size_t>(i)];
                 double* xg = px->grad.data() + static_cast<std::size_t>(i) * c;
                 for (int j = 0; j < c; ++j) {
                   const double gy = g[j] * pg->value[j];
                   xg[j] += (gy - m1 - xh[j] * m2) * is;
                 }
               }
             }
           });
  }
  return Tensor::wrap(out);
}

Tensor gelu(const Tensor& x) {
  auto out = make_node(x.shape(), "gelu");
  const auto& xv = x.node()->value;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    out->value[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  if (any_requires({&x})) {
    Node* px = x.node().get();
    attach(out, {x.node()}, [px](Node& n) {
      px->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        const double v = px->value[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        px->grad[i] += n.grad[i] * (cdf + v * pdf);
      }
    });
  }
  return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// reductions / indexing

MaxPool max_pool_axis(const Tensor& x, int axis) {
  check_rank2(x, "max_pool_axis");
  if (axis != 0 && axis != 1) fail("max_pool_axis: axis must be 0 or 1");
  const int r = x.dim(0), c = x.dim(1);
  const int keep = axis == 0 ? c : r;
  const int pooled = axis == 0 ? r : c;
  if (pooled < 1) fail("max_pool_axis: empty pooled axis");
  auto out = make_node({keep}, "max_pool");
  std::vector<int> arg(static_cast<std::size_t>(keep), 0);
  const double* xv = x.node()->value.data();
  for (int j = 0; j < keep; ++j) {
    double best = -std::numeric_limits<double>::infinity();
    int bi = 0;
    for (int i = 0; i < pooled; ++i) {
      const double v = axis == 0 ? xv[static_cast<std::size_t>(i) * c + j]
                                 : xv[static_cast<std::size_t>(j) * c + i];
      if (v > best) {  // strict: ties stay at the lowest index
        best = v;
        bi = i;
      }
    }
    out->value[static_cast<std::size_t>(j)] = best;
    arg[static_cast<std::size_t>(j)] = bi;
  }
  MaxPool result;
  result.argmax = arg;
  if (any_requires({&x})) {
    Node* px = x.node().get();
    attach(out, {x.node()}, [px, arg = std::move(arg), axis, c, keep](Node& n) {
      px->ensure_grad();
      for (int j = 0; j < keep; ++j) {
        const int i = arg[static_cast<std::size_t>(j)];
        const std::size_t ix = axis == 0 ? static_cast<std::size_t>(i) * c + j
                                         : static_cast<std::size_t>(j) * c + i;
        px->grad[ix] += n.grad[static_cast<std::size_t>(j)];
      }
    });
  }
  result.values = Tensor::wrap(out);
  return result;
}

Tensor sum_all(const Tensor& x) {
  auto out = make_node({1}, "sum_all");
  double s = 0.0;
  for (double v : x.node()->value) s += v;
  out->value[0] = s;
  if (any_requires({&x})) {
    Node* px = x.node().get();
    attach(out, {x.node()}, [px](Node& n) {
      px->ensure_grad();
      const double g = n.grad[0];
      for (double& v : px->grad) v += g;
    });
  }
  return Tensor::wrap(out);
}

Tensor mean_rows(const Tensor& x) {
  check_rank2(x, "mean_rows");
  const int r = x.dim(0), c = x.dim(1);
  auto out = make_node({1, c}, "mean_rows");
  const double* xv = x.node()->value.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out->value[static_cast<std::size_t>(j)] += xv[static_cast<std::size_t>(i) * c + j];
  for (int j = 0; j < c; ++j) out->value[static_cast<std::size_t>(j)] /= r;
  if (any_requires({&x})) {
    Node* px = x.node().get();
    attach(out, {x.node()}, [px, r, c](Node& n) {
      px->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          px->grad[static_cast<std::size_t>(i) * c + j] += n.grad[static_cast<std::size_t>(j)] / r;
    });
  }
  return Tensor::wrap(out);
}

Tensor pick(const Tensor& x, std::int64_t flat_index) {
  if (flat_index < 0 || flat_index >= x.size())
    fail("pick: index " + std::to_string(flat_index) + " out of range for " + shape_str(x.shape()));
  auto out = make_node({1}, "pick");
  out->value[0] = x.node()->value[static_cast<std::size_t>(flat_index)];
  if (any_requires({&x})) {
    Node* px = x.node().get();
    attach(out, {x.node()}, [px, flat_index](Node& n) {
      px->ensure_grad();
      px->grad[static_cast<std::size_t>(flat_index)] += n.grad[0];
    });
  }
  return Tensor::wrap(out);
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  check_rank2(table, "embedding_lookup");
  const int v = table.dim(0), d = table.dim(1);
  const int n = static_cast<int>(ids.size());
  if (n == 0) fail("embedding_lookup: empty id list");
  for (int id : ids)
    if (id < 0 || id >= v)
      fail("embedding_lookup: id " + std::to_string(id) + " out of range [0, " + std::to_string(v) + ")");
  auto out = make_node({n, d}, "embedding_lookup");
  const double* tv = table.node()->value.data();
  for (int i = 0; i < n; ++i)
    std::copy(tv + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d,
              tv + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)] + 1) * d,
              out->value.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * d));
  if (any_requires({&table})) {
    Node* pt = table.node().get();
    std::vector<int> ids_copy(ids.begin(), ids.end());
    attach(out, {table.node()}, [pt, ids_copy = std::move(ids_copy), d](Node& nd) {
      pt->ensure_grad();
      for (std::size_t i = 0; i < ids_copy.size(); ++i) {
        double* g = pt->grad.data() + static_cast<std::size_t>(ids_copy[i]) * d;
        const double* og = nd.grad.data() + i * d;
        for (int j = 0; j < d; ++j) g[j] += og[j];
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor masked_fill_rows(const Tensor& x, const std::vector<std::uint8_t>& row_mask,
                        const Tensor& fill_row) {
  const int r = rows_of(x), c = cols_of(x);
  if (static_cast<int>(row_mask.size()) != r)
    fail("masked_fill_rows: mask length " + std::to_string(row_mask.size()) + " vs rows " + std::to_string(r));
  if (fill_row.size() != c) fail("masked_fill_rows: fill row must have " + std::to_string(c) + " entries");
  auto out = make_node(x.shape(), "masked_fill_rows");
  const double* xv = x.node()->value.data();
  const double* fv = fill_row.node()->value.data();
  for (int i = 0; i < r; ++i) {
    const double* src = row_mask[static_cast<std::size_t>(i)] ? fv : xv + static_cast<std::size_t>(i) * c;
    std::copy(src, src + c, out->value.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * c));
  }
  if (any_requires({&x, &fill_row})) {
    Node* px = x.node().get();
    Node* pf = fill_row.node().get();
    attach(out, {x.node(), fill_row.node()}, [px, pf, mask = row_mask, r, c](Node& n) {
      if (px->requires_grad) px->ensure_grad();
      if (pf->requires_grad) pf->ensure_grad();
      for (int i = 0; i < r; ++i) {
        const double* g = n.grad.data() + static_cast<std::size_t>(i) * c;
        if (mask[static_cast<std::size_t>(i)]) {
          if (pf->requires_grad)
            for (int j = 0; j < c; ++j) pf->grad[j] += g[j];
        } else if (px->requires_grad) {
          double* xg = px->grad.data() + static_cast<std::size_t>(i) * c;
          for (int j = 0; j < c; ++j) xg[j] += g[j];
        }
      }
    });
  }
  return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// backward

void backward(const Tensor& loss) {
  if (loss.size() != 1) fail("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) fail("backward: loss does not require grad");

  // Iterative post-order topological sort.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

}  // namespace ctxasr
