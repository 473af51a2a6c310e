#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace spikereg {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;      // sized lazily, same length as values
  bool tracked = false;          // participates in differentiation
  std::uint64_t tape_id = 0;     // tape the tensor was recorded on (0 = leaf/none)
};
}  // namespace detail

// Dense real tensor with 1 to 3 axes. Copies are shallow (shared storage),
// which is what lets backward closures accumulate into leaf gradients.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t axes() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape[axis]; }
  std::size_t size() const { return impl_->values.size(); }
  std::size_t rows() const;  // 2-D only
  std::size_t cols() const;  // 2-D only
  bool is_scalar() const { return size() == 1 && axes() == 1; }
  bool same_shape(const Tensor& o) const { return impl_->shape == o.impl_->shape; }

  double item() const;  // scalar only
  double operator[](std::size_t i) const { return impl_->values[i]; }
  double& operator[](std::size_t i) { return impl_->values[i]; }
  double at(std::size_t r, std::size_t c) const;
  double& at(std::size_t r, std::size_t c);

  std::span<const double> values() const { return impl_->values; }
  std::span<double> values_mut() { return impl_->values; }

  // Gradient tracking. require_grad marks a leaf; results of ops on tracked
  // tensors are tracked automatically while a tape is live.
  Tensor& require_grad(bool on = true);
  bool tracked() const { return impl_->tracked; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const;
  void zero_grad();

  // Untracked copy of the values (constant as far as differentiation goes).
  Tensor detach() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Records the primitive ops of one forward pass, in execution order, so a
// single reverse sweep visits each op exactly once. A tape is consumed by
// backward(); build a new one for the next pass. Nested tapes are not
// supported: one live tape per thread.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();
  std::uint64_t id() const { return id_; }
  bool consumed() const { return consumed_; }
  std::size_t num_ops() const { return steps_.size(); }

  void record(std::function<void()> backward_step);

 private:
  friend void backward(const Tensor& loss);
  std::vector<std::function<void()>> steps_;
  std::uint64_t id_;
  bool consumed_ = false;
};

// Reverse sweep from a tracked scalar recorded on the live tape. Populates
// grad() of every tracked ancestor and consumes the tape.
void backward(const Tensor& loss);

// ---- primitive ops ----
// Elementwise binary ops accept equal shapes, a scalar (shape {1}) operand,
// or a 1-D vector of length D against a 2-D (T, D) operand (row broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // zero divisor is rejected
Tensor smul(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);  // (m,k) x (k,n)
Tensor transpose(const Tensor& a);                // 2-D

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);   // non-positive input is rejected
Tensor sqrt(const Tensor& a);  // negative input is rejected
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);

Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);
Tensor sum_all(const Tensor& a);  // reduce to a scalar

// Row-wise over the last axis (a 1-D tensor is a single row).
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);

// out[i] = mask[i] != 0 ? value : a[i]; gradient flows only where mask == 0.
Tensor masked_fill(const Tensor& a, const Tensor& mask, double value);

Tensor concat0(const std::vector<Tensor>& parts);  // along axis 0
Tensor concat0(const Tensor& a, const Tensor& b);
Tensor slice0(const Tensor& a, std::size_t start, std::size_t count);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return smul(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return smul(a, c); }

}  // namespace spikereg
