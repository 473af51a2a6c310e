#include "spikereg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace spikereg {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ")";
  return os.str();
}

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

void validate_shape(const Shape& s) {
  if (s.empty() || s.size() > 3) fail("tensor shape must have 1 to 3 axes, got " + shape_str(s));
  for (std::size_t d : s) {
    if (d == 0) fail("tensor axes must be nonempty, got " + shape_str(s));
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : impl_(std::make_shared<detail::TensorImpl>()) {
  validate_shape(shape);
  impl_->values.assign(shape_numel(shape), 0.0);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  validate_shape(shape);
  if (values.size() != shape_numel(shape)) {
    fail("value count " + std::to_string(values.size()) + " does not match shape " +
         shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->values.begin(), t.impl_->values.end(), v);
  return t;
}

std::size_t Tensor::rows() const {
  if (axes() != 2) fail("rows() requires a 2-D tensor, got " + shape_str(shape()));
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  if (axes() != 2) fail("cols() requires a 2-D tensor, got " + shape_str(shape()));
  return impl_->shape[1];
}

double Tensor::item() const {
  if (size() != 1) fail("item() requires a scalar, got shape " + shape_str(shape()));
  return impl_->values[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return impl_->values[r * cols() + c];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  return impl_->values[r * cols() + c];
}

Tensor& Tensor::require_grad(bool on) {
  impl_->tracked = on;
  if (on && impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return *this;
}

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty()) {
    fail("tensor has no gradient (not tracked, or backward has not run)");
  }
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor(impl_->shape, impl_->values);
}

// ---- tape ----

namespace {
thread_local Tape* g_current_tape = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};
}  // namespace

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {
  if (g_current_tape != nullptr) {
    throw std::logic_error("a tape is already live on this thread; nesting is not supported");
  }
  g_current_tape = this;
}

Tape::~Tape() { g_current_tape = nullptr; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::function<void()> backward_step) {
  if (consumed_) {
    throw std::logic_error("tape already consumed by backward; start a new tape");
  }
  steps_.push_back(std::move(backward_step));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) fail("backward: undefined tensor");
  if (loss.size() != 1) {
    fail("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  Tape* tape = Tape::current();
  if (tape == nullptr) fail("backward: no live tape on this thread");
  if (tape->consumed_) {
    fail("backward: tape already consumed; build a new tape for another pass");
  }
  auto* impl = loss.impl();
  if (!impl->tracked || impl->tape_id != tape->id()) {
    fail("backward: loss was not produced on the live tape");
  }
  impl->grad.assign(1, 1.0);
  for (auto it = tape->steps_.rbegin(); it != tape->steps_.rend(); ++it) (*it)();
  tape->consumed_ = true;
}

// ---- op machinery ----

namespace {

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

void ensure_grad(detail::TensorImpl* t) {
  if (t->grad.empty()) t->grad.assign(t->values.size(), 0.0);
}

// Marks the result tracked and recorded iff any operand is tracked and a
// tape is live; returns whether the op must record a backward step.
bool begin_tracking(Tensor& result, bool any_operand_tracked) {
  Tape* tape = Tape::current();
  if (tape == nullptr || !any_operand_tracked) return false;
  result.impl()->tracked = true;
  result.impl()->tape_id = tape->id();
  return true;
}

enum class Bcast { equal, a_scalar, b_scalar, a_rowvec, b_rowvec };

Bcast resolve_bcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::equal;
  if (a.is_scalar()) return Bcast::a_scalar;
  if (b.is_scalar()) return Bcast::b_scalar;
  if (a.axes() == 1 && b.axes() == 2 && a.dim(0) == b.dim(1)) return Bcast::a_rowvec;
  if (b.axes() == 1 && a.axes() == 2 && b.dim(0) == a.dim(1)) return Bcast::b_rowvec;
  fail(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
       shape_str(b.shape()));
}

// Flat output index -> operand indices under the resolved broadcast.
struct BcastIndex {
  Bcast kind;
  std::size_t inner;  // row length for rowvec broadcasts
  std::size_t a_index(std::size_t i) const {
    switch (kind) {
      case Bcast::a_scalar: return 0;
      case Bcast::a_rowvec: return i % inner;
      default: return i;
    }
  }
  std::size_t b_index(std::size_t i) const {
    switch (kind) {
      case Bcast::b_scalar: return 0;
      case Bcast::b_rowvec: return i % inner;
      default: return i;
    }
  }
};

template <class Fwd, class DA, class DB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, DA dfa, DB dfb) {
  const Bcast kind = resolve_bcast(a, b, name);
  const Tensor& shaped = (kind == Bcast::a_scalar || kind == Bcast::a_rowvec) ? b : a;
  Tensor out(shaped.shape());
  const BcastIndex ix{kind, shaped.axes() == 2 ? shaped.dim(1) : shaped.size()};

  const auto av = a.values();
  const auto bv = b.values();
  auto ov = out.values_mut();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    ov[i] = fwd(av[ix.a_index(i)], bv[ix.b_index(i)]);
  }

  if (begin_tracking(out, a.tracked() || b.tracked())) {
    ImplPtr ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
    Tape::current()->record([ai, bi, oi, ix, dfa, dfb]() {
      const auto& g = oi->grad;
      if (g.empty()) return;
      if (ai->tracked) {
        ensure_grad(ai.get());
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t ja = ix.a_index(i), jb = ix.b_index(i);
          ai->grad[ja] += g[i] * dfa(ai->values[ja], bi->values[jb], oi->values[i]);
        }
      }
      if (bi->tracked) {
        ensure_grad(bi.get());
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t ja = ix.a_index(i), jb = ix.b_index(i);
          bi->grad[jb] += g[i] * dfb(ai->values[ja], bi->values[jb], oi->values[i]);
        }
      }
    });
  }
  return out;
}

template <class Fwd, class DX>
Tensor unary_op(const Tensor& a, Fwd fwd, DX dfx) {
  Tensor out(a.shape());
  const auto av = a.values();
  auto ov = out.values_mut();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i]);

  if (begin_tracking(out, a.tracked())) {
    ImplPtr ai = a.impl_ptr(), oi = out.impl_ptr();
    Tape::current()->record([ai, oi, dfx]() {
      const auto& g = oi->grad;
      if (g.empty() || !ai->tracked) return;
      ensure_grad(ai.get());
      for (std::size_t i = 0; i < g.size(); ++i) {
        ai->grad[i] += g[i] * dfx(ai->values[i], oi->values[i]);
      }
    });
  }
  return out;
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double y : b.values()) {
    if (y == 0.0) fail("div: zero divisor");
  }
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor smul(const Tensor& a, double c) {
  return unary_op(
      a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

// ---- matmul / transpose ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.axes() != 2 || b.axes() != 2 || a.dim(1) != b.dim(0)) {
    fail("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  {
    const auto av = a.values();
    const auto bv = b.values();
    auto ov = out.values_mut();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double x = av[i * k + p];
        if (x == 0.0) continue;
        const double* brow = &bv[p * n];
        double* orow = &ov[i * n];
        for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
      }
    }
  }

  if (begin_tracking(out, a.tracked() || b.tracked())) {
    ImplPtr ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
    Tape::current()->record([ai, bi, oi, m, k, n]() {
      const auto& g = oi->grad;
      if (g.empty()) return;
      if (ai->tracked) {
        ensure_grad(ai.get());
        // dA = G * B^T
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* grow = &g[i * n];
            const double* brow = &bi->values[p * n];
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ai->grad[i * k + p] += acc;
          }
        }
      }
      if (bi->tracked) {
        ensure_grad(bi.get());
        // dB = A^T * G
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = &g[i * n];
          for (std::size_t p = 0; p < k; ++p) {
            const double x = ai->values[i * k + p];
            if (x == 0.0) continue;
            double* brow = &bi->grad[p * n];
            for (std::size_t j = 0; j < n; ++j) brow[j] += x * grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.axes() != 2) fail("transpose requires a 2-D tensor, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out({c, r});
  const auto av = a.values();
  auto ov = out.values_mut();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) ov[j * r + i] = av[i * c + j];

  if (begin_tracking(out, a.tracked())) {
    ImplPtr ai = a.impl_ptr(), oi = out.impl_ptr();
    Tape::current()->record([ai, oi, r, c]() {
      const auto& g = oi->grad;
      if (g.empty() || !ai->tracked) return;
      ensure_grad(ai.get());
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ai->grad[i * c + j] += g[j * r + i];
    });
  }
  return out;
}

// ---- transcendental ----

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double out) { return out; });
}

Tensor log(const Tensor& a) {
  for (double x : a.values()) {
    if (x <= 0.0) fail("log: non-positive input " + std::to_string(x));
  }
  return unary_op(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  for (double x : a.values()) {
    if (x < 0.0) fail("sqrt: negative input " + std::to_string(x));
  }
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double, double out) { return 0.5 / out; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double, double out) { return 1.0 - out * out; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// ---- reductions ----

namespace {

struct ReduceLayout {
  std::size_t outer, axis_len, inner;  // a[o][k][i] flattened
};

ReduceLayout reduce_layout(const Tensor& a, std::size_t axis) {
  if (axis >= a.axes()) {
    fail("reduction axis " + std::to_string(axis) + " out of range for shape " +
         shape_str(a.shape()));
  }
  ReduceLayout l{1, a.dim(axis), 1};
  for (std::size_t d = 0; d < axis; ++d) l.outer *= a.dim(d);
  for (std::size_t d = axis + 1; d < a.axes(); ++d) l.inner *= a.dim(d);
  return l;
}

Shape reduced_shape(const Tensor& a, std::size_t axis) {
  Shape s;
  for (std::size_t d = 0; d < a.axes(); ++d) {
    if (d != axis) s.push_back(a.dim(d));
  }
  if (s.empty()) s.push_back(1);  // reducing a 1-D tensor yields a scalar
  return s;
}

Tensor reduce_op(const Tensor& a, std::size_t axis, double scale) {
  const ReduceLayout l = reduce_layout(a, axis);
  Tensor out(reduced_shape(a, axis));
  const auto av = a.values();
  auto ov = out.values_mut();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < l.axis_len; ++k) {
        acc += av[(o * l.axis_len + k) * l.inner + i];
      }
      ov[o * l.inner + i] = acc * scale;
    }
  }

  Tensor result = out;
  if (begin_tracking(result, a.tracked())) {
    ImplPtr ai = a.impl_ptr(), oi = result.impl_ptr();
    Tape::current()->record([ai, oi, l, scale]() {
      const auto& g = oi->grad;
      if (g.empty() || !ai->tracked) return;
      ensure_grad(ai.get());
      for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t i = 0; i < l.inner; ++i) {
          const double gv = g[o * l.inner + i] * scale;
          for (std::size_t k = 0; k < l.axis_len; ++k) {
            ai->grad[(o * l.axis_len + k) * l.inner + i] += gv;
          }
        }
      }
    });
  }
  return result;
}

}  // namespace

Tensor sum(const Tensor& a, std::size_t axis) { return reduce_op(a, axis, 1.0); }

Tensor mean(const Tensor& a, std::size_t axis) {
  return reduce_op(a, axis, 1.0 / static_cast<double>(a.dim(axis)));
}

Tensor sum_all(const Tensor& a) {
  Tensor t = a;
  while (!t.is_scalar()) t = sum(t, 0);
  return t;
}

// ---- row-wise softmax family ----

namespace {

struct RowLayout {
  std::size_t rows, cols;
};

RowLayout row_layout(const Tensor& a, const char* op) {
  if (a.axes() == 1) return {1, a.dim(0)};
  if (a.axes() == 2) return {a.dim(0), a.dim(1)};
  fail(std::string(op) + " supports 1-D and 2-D tensors, got " + shape_str(a.shape()));
}

}  // namespace

Tensor softmax(const Tensor& a) {
  const RowLayout l = row_layout(a, "softmax");
  Tensor out(a.shape());
  const auto av = a.values();
  auto ov = out.values_mut();
  for (std::size_t r = 0; r < l.rows; ++r) {
    const double* x = &av[r * l.cols];
    double* y = &ov[r * l.cols];
    double mx = x[0];
    for (std::size_t j = 1; j < l.cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < l.cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < l.cols; ++j) y[j] /= z;
  }

  if (begin_tracking(out, a.tracked())) {
    ImplPtr ai = a.impl_ptr(), oi = out.impl_ptr();
    Tape::current()->record([ai, oi, l]() {
      const auto& g = oi->grad;
      if (g.empty() || !ai->tracked) return;
      ensure_grad(ai.get());
      for (std::size_t r = 0; r < l.rows; ++r) {
        const double* s = &oi->values[r * l.cols];
        const double* gr = &g[r * l.cols];
        double dot = 0.0;
        for (std::size_t j = 0; j < l.cols; ++j) dot += gr[j] * s[j];
        for (std::size_t j = 0; j < l.cols; ++j) {
          ai->grad[r * l.cols + j] += s[j] * (gr[j] - dot);
        }
      }
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& a) {
  const RowLayout l = row_layout(a, "log_softmax");
  Tensor out(a.shape());
  const auto av = a.values();
  auto ov = out.values_mut();
  for (std::size_t r = 0; r < l.rows; ++r) {
    const double* x = &av[r * l.cols];
    double* y = &ov[r * l.cols];
    double mx = x[0];
    for (std::size_t j = 1; j < l.cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < l.cols; ++j) z += std::exp(x[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < l.cols; ++j) y[j] = x[j] - lz;
  }

  if (begin_tracking(out, a.tracked())) {
    ImplPtr ai = a.impl_ptr(), oi = out.impl_ptr();
    Tape::current()->record([ai, oi, l]() {
      const auto& g = oi->grad;
      if (g.empty() || !ai->tracked) return;
      ensure_grad(ai.get());
      for (std::size_t r = 0; r < l.rows; ++r) {
        const double* y = &oi->values[r * l.cols];
        const double* gr = &g[r * l.cols];
        double gsum = 0.0;
        for (std::size_t j = 0; j < l.cols; ++j) gsum += gr[j];
        for (std::size_t j = 0; j < l.cols; ++j) {
          ai->grad[r * l.cols + j] += gr[j] - std::exp(y[j]) * gsum;
        }
      }
    });
  }
  return out;
}

// ---- masking / shape ops ----

Tensor masked_fill(const Tensor& a, const Tensor& mask, double value) {
  if (!a.same_shape(mask)) {
    fail("masked_fill: mask shape " + shape_str(mask.shape()) + " does not match input " +
         shape_str(a.shape()));
  }
  Tensor out(a.shape());
  const auto av = a.values();
  const auto mv = mask.values();
  auto ov = out.values_mut();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = mv[i] != 0.0 ? value : av[i];

  if (begin_tracking(out, a.tracked())) {
    ImplPtr ai = a.impl_ptr(), mi = mask.impl_ptr(), oi = out.impl_ptr();
    Tape::current()->record([ai, mi, oi]() {
      const auto& g = oi->grad;
      if (g.empty() || !ai->tracked) return;
      ensure_grad(ai.get());
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (mi->values[i] == 0.0) ai->grad[i] += g[i];
      }
    });
  }
  return out;
}

Tensor concat0(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat0: no operands");
  const Shape& first = parts.front().shape();
  std::size_t total0 = 0;
  bool any_tracked = false;
  for (const Tensor& p : parts) {
    if (p.axes() != first.size() ||
        !std::equal(first.begin() + 1, first.end(), p.shape().begin() + 1)) {
      fail("concat0: trailing axes differ, " + shape_str(first) + " vs " + shape_str(p.shape()));
    }
    total0 += p.dim(0);
    any_tracked = any_tracked || p.tracked();
  }
  Shape out_shape = first;
  out_shape[0] = total0;
  Tensor out(out_shape);
  auto ov = out.values_mut();
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const auto pv = p.values();
    std::copy(pv.begin(), pv.end(), ov.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += pv.size();
  }

  if (begin_tracking(out, any_tracked)) {
    std::vector<ImplPtr> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl_ptr());
    ImplPtr oi = out.impl_ptr();
    Tape::current()->record([impls, oi]() {
      const auto& g = oi->grad;
      if (g.empty()) return;
      std::size_t off = 0;
      for (const ImplPtr& pi : impls) {
        const std::size_t n = pi->values.size();
        if (pi->tracked) {
          ensure_grad(pi.get());
          for (std::size_t i = 0; i < n; ++i) pi->grad[i] += g[off + i];
        }
        off += n;
      }
    });
  }
  return out;
}

Tensor concat0(const Tensor& a, const Tensor& b) { return concat0(std::vector<Tensor>{a, b}); }

Tensor slice0(const Tensor& a, std::size_t start, std::size_t count) {
  if (count == 0 || start + count > a.dim(0)) {
    fail("slice0: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
         ") out of bounds for shape " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[0] = count;
  const std::size_t stride = a.size() / a.dim(0);
  Tensor out(out_shape);
  const auto av = a.values();
  auto ov = out.values_mut();
  std::copy(av.begin() + static_cast<std::ptrdiff_t>(start * stride),
            av.begin() + static_cast<std::ptrdiff_t>((start + count) * stride), ov.begin());

  if (begin_tracking(out, a.tracked())) {
    ImplPtr ai = a.impl_ptr(), oi = out.impl_ptr();
    const std::size_t base = start * stride;
    Tape::current()->record([ai, oi, base]() {
      const auto& g = oi->grad;
      if (g.empty() || !ai->tracked) return;
      ensure_grad(ai.get());
      for (std::size_t i = 0; i < g.size(); ++i) ai->grad[base + i] += g[i];
    });
  }
  return out;
}

}  // namespace spikereg
