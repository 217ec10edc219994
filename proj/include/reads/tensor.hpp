#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "reads/errors.hpp"
#include "reads/kernels.hpp"
#include "reads/rng.hpp"

namespace reads {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

class Tape;

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // same size as values once touched
  bool requires_grad = false;
  const Tape* tape_tag = nullptr;  // tape that produced this tensor, if any
};
std::vector<double>& ensure_grad(const std::shared_ptr<TensorData>& t);
}  // namespace detail

// Dense row-major tensor of doubles with shared-buffer handle semantics.
// Gradients accumulate into `grad` during Tape::backward.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);
  static Tensor normal(Shape shape, Rng& rng, double mean, double stddev,
                       bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(d_->values.size()); }

  double* data() { return d_->values.data(); }
  const double* data() const { return d_->values.data(); }
  std::span<double> values() { return d_->values; }
  std::span<const double> values() const { return d_->values; }

  // Value of a one-element tensor.
  double value() const;
  double at(std::initializer_list<int> idx) const;

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    d_->requires_grad = v;
    return *this;
  }

  // Gradient buffer (allocated zero on first access).
  std::span<const double> grad() const { return detail::ensure_grad(d_); }
  std::span<double> grad() { return detail::ensure_grad(d_); }
  Tensor grad_tensor() const;
  void zero_grad();

  // Deep copy of values (fresh gradient, same requires_grad).
  Tensor clone() const;

  std::shared_ptr<detail::TensorData> node() const { return d_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<detail::TensorData> d_;
  friend Tensor wrap_node_(std::shared_ptr<detail::TensorData>);
};

// Ordered record of executed differentiable operations. Replaying it
// backward visits the operations in exact reverse execution order. A tape is
// consumed by one backward pass; reusing it is a usage error.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_step) { ops_.push_back(std::move(backward_step)); }
  std::size_t size() const { return ops_.size(); }
  bool consumed() const { return consumed_; }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
  // requires_grad tensor reachable from the loss.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

// Makes `tape` the recording target for operations executed on this thread
// for the lifetime of the scope. Scopes may not nest.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
};

// The tape currently recording on this thread, or nullptr.
Tape* current_tape();

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::pair<int, int> stride, Padding pad);
Tensor maxpool(const Tensor& input, std::pair<int, int> kernel, std::pair<int, int> stride);
Tensor avgpool(const Tensor& input, std::pair<int, int> kernel, std::pair<int, int> stride);

// Elementwise with right-aligned extent-1 broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor rsqrt(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reduce_mean(const Tensor& x, int axis);  // keeps the axis with extent 1
Tensor reduce_max(const Tensor& x, int axis);   // first maximal index gets the gradient

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // 2-D
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor select_row(const Tensor& matrix, int row);      // 1×C view-copy of one row
Tensor take(const Tensor& x, std::int64_t flat_index);  // scalar pick

// Samples image (H×W×C) at grid (H'×W'×2; channel 0 = x, 1 = y, normalized
// [0,1], pixel centers at (i+0.5)/n). Out-of-range coordinates clamp to the
// border. Differentiable in both the image and the grid.
Tensor bilinear_sample(const Tensor& image, const Tensor& grid);

}  // namespace reads
