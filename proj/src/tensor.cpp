#include "reads/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace reads {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

namespace detail {
std::vector<double>& ensure_grad(const std::shared_ptr<TensorData>& t) {
  if (t->grad.empty()) t->grad.assign(t->values.size(), 0.0);
  return t->grad;
}
}  // namespace detail

using detail::ensure_grad;
using detail::TensorData;

namespace {

thread_local Tape* g_current_tape = nullptr;

std::shared_ptr<TensorData> make_node(Shape shape, bool requires_grad) {
  for (int e : shape) {
    if (e < 1) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  auto d = std::make_shared<TensorData>();
  d->values.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  d->shape = std::move(shape);
  d->requires_grad = requires_grad;
  return d;
}

}  // namespace

Tensor wrap_node_(std::shared_ptr<TensorData> d) { return Tensor(std::move(d)); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return wrap_node_(make_node(std::move(shape), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.d_->values.begin(), t.d_->values.end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("tensor init: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  Tensor t = zeros(std::move(shape), requires_grad);
  t.d_->values = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.d_->values) v = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::normal(Shape shape, Rng& rng, double mean, double stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.d_->values) v = rng.normal(mean, stddev);
  return t;
}

double Tensor::value() const {
  if (!d_ || d_->values.size() != 1) {
    throw UsageError("value(): tensor is not a scalar");
  }
  return d_->values[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  if (static_cast<int>(idx.size()) != rank()) throw UsageError("at(): index rank mismatch");
  std::int64_t off = 0;
  int ax = 0;
  for (int i : idx) {
    if (i < 0 || i >= d_->shape[static_cast<size_t>(ax)]) throw UsageError("at(): index out of range");
    off = off * d_->shape[static_cast<size_t>(ax)] + i;
    ++ax;
  }
  return d_->values[static_cast<size_t>(off)];
}

Tensor Tensor::grad_tensor() const {
  ensure_grad(d_);
  return from(d_->shape, d_->grad);
}

void Tensor::zero_grad() {
  if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t = zeros(d_->shape, d_->requires_grad);
  t.d_->values = d_->values;
  return t;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) {
    throw UsageError("backward: tape already consumed; run a new forward pass first");
  }
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward: loss must be a one-element tensor");
  }
  if (loss.node()->tape_tag != this) {
    throw UsageError("backward: loss was not produced under this tape");
  }
  consumed_ = true;
  ensure_grad(loss.node())[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(Tape& tape) {
  if (g_current_tape) throw UsageError("TapeScope: tape scopes may not nest");
  if (tape.consumed()) throw UsageError("TapeScope: tape already consumed");
  g_current_tape = &tape;
}

TapeScope::~TapeScope() { g_current_tape = nullptr; }

Tape* current_tape() { return g_current_tape; }

namespace {

// Marks an op output: tagged with the recording tape, requires_grad when any
// input needs gradients. Returns true when a backward step must be recorded.
bool finish_output(Tensor& out, std::initializer_list<const Tensor*> inputs) {
  Tape* tape = g_current_tape;
  if (!tape) return false;
  out.node()->tape_tag = tape;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) {
      out.node()->requires_grad = true;
      return true;
    }
  }
  return false;
}

void record(std::function<void()> fn) { g_current_tape->record(std::move(fn)); }

// ---- broadcasting ----------------------------------------------------------

struct Bcast {
  Shape out_shape;
  std::vector<std::int64_t> stride_a;  // 0 on broadcast axes
  std::vector<std::int64_t> stride_b;
  std::int64_t numel;
  bool same_shape;
};

Bcast make_bcast(const Shape& a, const Shape& b, const char* opname) {
  Bcast bc;
  const int ra = static_cast<int>(a.size());
  const int rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  bc.out_shape.assign(static_cast<size_t>(r), 1);
  for (int i = 0; i < r; ++i) {
    const int da = i < r - ra ? 1 : a[static_cast<size_t>(i - (r - ra))];
    const int db = i < r - rb ? 1 : b[static_cast<size_t>(i - (r - rb))];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(opname) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcastable");
    }
    bc.out_shape[static_cast<size_t>(i)] = std::max(da, db);
  }
  bc.same_shape = (a == b);
  bc.numel = shape_numel(bc.out_shape);
  auto strides_for = [&](const Shape& s) {
    const int rs = static_cast<int>(s.size());
    std::vector<std::int64_t> nat(static_cast<size_t>(rs), 1);
    for (int i = rs - 2; i >= 0; --i) nat[static_cast<size_t>(i)] = nat[static_cast<size_t>(i + 1)] * s[static_cast<size_t>(i + 1)];
    std::vector<std::int64_t> out(static_cast<size_t>(r), 0);
    for (int i = 0; i < rs; ++i) {
      out[static_cast<size_t>(r - rs + i)] = (s[static_cast<size_t>(i)] == 1) ? 0 : nat[static_cast<size_t>(i)];
    }
    return out;
  };
  bc.stride_a = strides_for(a);
  bc.stride_b = strides_for(b);
  return bc;
}

// Calls fn(out_index, a_index, b_index) for every output element.
template <typename Fn>
void bcast_for_each(const Bcast& bc, Fn&& fn) {
  const int r = static_cast<int>(bc.out_shape.size());
  std::vector<std::int64_t> idx(static_cast<size_t>(r), 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t i = 0; i < bc.numel; ++i) {
    fn(i, oa, ob);
    for (int ax = r - 1; ax >= 0; --ax) {
      idx[static_cast<size_t>(ax)]++;
      oa += bc.stride_a[static_cast<size_t>(ax)];
      ob += bc.stride_b[static_cast<size_t>(ax)];
      if (idx[static_cast<size_t>(ax)] < bc.out_shape[static_cast<size_t>(ax)]) break;
      oa -= bc.stride_a[static_cast<size_t>(ax)] * bc.out_shape[static_cast<size_t>(ax)];
      ob -= bc.stride_b[static_cast<size_t>(ax)] * bc.out_shape[static_cast<size_t>(ax)];
      idx[static_cast<size_t>(ax)] = 0;
    }
  }
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  Bcast bc = make_bcast(a.shape(), b.shape(), name);
  Tensor out = Tensor::zeros(bc.out_shape);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  if (bc.same_shape) {
    const std::int64_t n = bc.numel;
    switch (op) {
      case BinOp::kAdd:
        for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
        break;
      case BinOp::kSub:
        for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
        break;
      case BinOp::kMul:
        for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
        break;
      case BinOp::kDiv:
        for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
        break;
    }
  } else {
    bcast_for_each(bc, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
      switch (op) {
        case BinOp::kAdd: po[i] = pa[ia] + pb[ib]; break;
        case BinOp::kSub: po[i] = pa[ia] - pb[ib]; break;
        case BinOp::kMul: po[i] = pa[ia] * pb[ib]; break;
        case BinOp::kDiv: po[i] = pa[ia] / pb[ib]; break;
      }
    });
  }
  if (finish_output(out, {&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    record([an, bn, on, bc, op] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      const double* pa = an->values.data();
      const double* pb = bn->values.data();
      double* da = an->requires_grad ? ensure_grad(an).data() : nullptr;
      double* db = bn->requires_grad ? ensure_grad(bn).data() : nullptr;
      bcast_for_each(bc, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
        const double gi = g[i];
        switch (op) {
          case BinOp::kAdd:
            if (da) da[ia] += gi;
            if (db) db[ib] += gi;
            break;
          case BinOp::kSub:
            if (da) da[ia] += gi;
            if (db) db[ib] -= gi;
            break;
          case BinOp::kMul:
            if (da) da[ia] += gi * pb[ib];
            if (db) db[ib] += gi * pa[ia];
            break;
          case BinOp::kDiv:
            if (da) da[ia] += gi / pb[ib];
            if (db) db[ib] -= gi * pa[ia] / (pb[ib] * pb[ib]);
            break;
        }
      });
    });
  }
  return out;
}

enum class UnOp { kSigmoid, kTanh, kRelu, kExp, kLog, kRsqrt, kNeg };

Tensor unary_op(const Tensor& x, UnOp op) {
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  const std::int64_t n = x.numel();
  switch (op) {
    case UnOp::kSigmoid:
      for (std::int64_t i = 0; i < n; ++i) po[i] = 1.0 / (1.0 + std::exp(-px[i]));
      break;
    case UnOp::kTanh:
      for (std::int64_t i = 0; i < n; ++i) po[i] = std::tanh(px[i]);
      break;
    case UnOp::kRelu:
      for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
      break;
    case UnOp::kExp:
      for (std::int64_t i = 0; i < n; ++i) po[i] = std::exp(px[i]);
      break;
    case UnOp::kLog:
      for (std::int64_t i = 0; i < n; ++i) po[i] = std::log(px[i]);
      break;
    case UnOp::kRsqrt:
      for (std::int64_t i = 0; i < n; ++i) po[i] = 1.0 / std::sqrt(px[i]);
      break;
    case UnOp::kNeg:
      for (std::int64_t i = 0; i < n; ++i) po[i] = -px[i];
      break;
  }
  if (finish_output(out, {&x})) {
    auto xn = x.node();
    auto on = out.node();
    record([xn, on, op, n] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      const double* y = on->values.data();
      const double* px = xn->values.data();
      double* dx = ensure_grad(xn).data();
      switch (op) {
        case UnOp::kSigmoid:
          for (std::int64_t i = 0; i < n; ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
          break;
        case UnOp::kTanh:
          for (std::int64_t i = 0; i < n; ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
          break;
        case UnOp::kRelu:
          for (std::int64_t i = 0; i < n; ++i) dx[i] += px[i] > 0.0 ? g[i] : 0.0;
          break;
        case UnOp::kExp:
          for (std::int64_t i = 0; i < n; ++i) dx[i] += g[i] * y[i];
          break;
        case UnOp::kLog:
          for (std::int64_t i = 0; i < n; ++i) dx[i] += g[i] / px[i];
          break;
        case UnOp::kRsqrt:
          for (std::int64_t i = 0; i < n; ++i) dx[i] += g[i] * (-0.5) * y[i] * y[i] * y[i];
          break;
        case UnOp::kNeg:
          for (std::int64_t i = 0; i < n; ++i) dx[i] -= g[i];
          break;
      }
    });
  }
  return out;
}

struct AxisView {
  std::int64_t outer, len, inner;
};

AxisView axis_view(const Shape& s, int axis, const char* name) {
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw UsageError(std::string(name) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(s));
  }
  AxisView v{1, s[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<size_t>(i)];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) v.inner *= s[static_cast<size_t>(i)];
  return v;
}

}  // namespace

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  kern::matmul(a.data(), b.data(), out.data(), m, k, n);
  if (finish_output(out, {&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    record([an, bn, on, m, k, n] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      if (an->requires_grad) kern::matmul_grad_a(g, bn->values.data(), ensure_grad(an).data(), m, k, n);
      if (bn->requires_grad) kern::matmul_grad_b(g, an->values.data(), ensure_grad(bn).data(), m, k, n);
    });
  }
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::pair<int, int> stride, Padding pad) {
  if (input.rank() != 3 || kernel.rank() != 4) {
    throw ShapeError("conv2d: expected H×W×C input and kh×kw×Cin×Cout kernel, got " +
                     shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
  }
  if (input.dim(2) != kernel.dim(2)) {
    throw ShapeError("conv2d: input channels " + std::to_string(input.dim(2)) +
                     " != kernel channels " + std::to_string(kernel.dim(2)));
  }
  kern::Conv2dGeom g = kern::make_conv2d_geom(input.dim(0), input.dim(1), input.dim(2),
                                              kernel.dim(0), kernel.dim(1), kernel.dim(3),
                                              stride.first, stride.second, pad);
  Tensor out = Tensor::zeros({g.out_h, g.out_w, g.cout});
  kern::conv2d(input.data(), kernel.data(), out.data(), g);
  if (finish_output(out, {&input, &kernel})) {
    auto in = input.node();
    auto kn = kernel.node();
    auto on = out.node();
    record([in, kn, on, g] {
      if (on->grad.empty()) return;
      const double* gout = on->grad.data();
      if (in->requires_grad) kern::conv2d_grad_input(gout, kn->values.data(), ensure_grad(in).data(), g);
      if (kn->requires_grad) kern::conv2d_grad_kernel(gout, in->values.data(), ensure_grad(kn).data(), g);
    });
  }
  return out;
}

Tensor maxpool(const Tensor& input, std::pair<int, int> kernel, std::pair<int, int> stride) {
  if (input.rank() != 3) {
    throw ShapeError("maxpool: expected H×W×C input, got " + shape_str(input.shape()));
  }
  kern::Pool2dGeom g = kern::make_pool2d_geom(input.dim(0), input.dim(1), input.dim(2),
                                              kernel.first, kernel.second, stride.first,
                                              stride.second);
  Tensor out = Tensor::zeros({g.out_h, g.out_w, g.c});
  auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(out.numel()));
  kern::maxpool(input.data(), out.data(), argmax->data(), g);
  if (finish_output(out, {&input})) {
    auto in = input.node();
    auto on = out.node();
    record([in, on, argmax] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      double* din = ensure_grad(in).data();
      for (size_t i = 0; i < argmax->size(); ++i) din[(*argmax)[i]] += g[i];
    });
  }
  return out;
}

Tensor avgpool(const Tensor& input, std::pair<int, int> kernel, std::pair<int, int> stride) {
  if (input.rank() != 3) {
    throw ShapeError("avgpool: expected H×W×C input, got " + shape_str(input.shape()));
  }
  kern::Pool2dGeom g = kern::make_pool2d_geom(input.dim(0), input.dim(1), input.dim(2),
                                              kernel.first, kernel.second, stride.first,
                                              stride.second);
  Tensor out = Tensor::zeros({g.out_h, g.out_w, g.c});
  kern::avgpool(input.data(), out.data(), g);
  if (finish_output(out, {&input})) {
    auto in = input.node();
    auto on = out.node();
    record([in, on, g] {
      if (on->grad.empty()) return;
      const double* gr = on->grad.data();
      double* din = ensure_grad(in).data();
      const double inv = 1.0 / (static_cast<double>(g.kh) * g.kw);
      for (int oy = 0; oy < g.out_h; ++oy) {
        for (int ox = 0; ox < g.out_w; ++ox) {
          for (int c = 0; c < g.c; ++c) {
            const double gi = gr[(static_cast<std::ptrdiff_t>(oy) * g.out_w + ox) * g.c + c] * inv;
            for (int ky = 0; ky < g.kh; ++ky) {
              for (int kx = 0; kx < g.kw; ++kx) {
                din[((static_cast<std::ptrdiff_t>(oy * g.sy + ky)) * g.in_w + (ox * g.sx + kx)) * g.c + c] += gi;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::kMul, "mul"); }
Tensor divide(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::kDiv, "divide"); }

Tensor sigmoid(const Tensor& x) { return unary_op(x, UnOp::kSigmoid); }
Tensor tanh(const Tensor& x) { return unary_op(x, UnOp::kTanh); }
Tensor relu(const Tensor& x) { return unary_op(x, UnOp::kRelu); }
Tensor exp(const Tensor& x) { return unary_op(x, UnOp::kExp); }
Tensor log(const Tensor& x) { return unary_op(x, UnOp::kLog); }
Tensor rsqrt(const Tensor& x) { return unary_op(x, UnOp::kRsqrt); }
Tensor neg(const Tensor& x) { return unary_op(x, UnOp::kNeg); }

Tensor scale(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] * c;
  if (finish_output(out, {&x})) {
    auto xn = x.node();
    auto on = out.node();
    record([xn, on, c, n] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      double* dx = ensure_grad(xn).data();
      for (std::int64_t i = 0; i < n; ++i) dx[i] += g[i] * c;
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] + c;
  if (finish_output(out, {&x})) {
    auto xn = x.node();
    auto on = out.node();
    record([xn, on, n] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      double* dx = ensure_grad(xn).data();
      for (std::int64_t i = 0; i < n; ++i) dx[i] += g[i];
    });
  }
  return out;
}

// ---- softmax family --------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  AxisView v = axis_view(x.shape(), axis, "softmax");
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t o = 0; o < v.outer; ++o) {
    for (std::int64_t in = 0; in < v.inner; ++in) {
      const std::int64_t base = o * v.len * v.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < v.len; ++j) mx = std::max(mx, px[base + j * v.inner]);
      double sum = 0.0;
      for (std::int64_t j = 0; j < v.len; ++j) {
        const double e = std::exp(px[base + j * v.inner] - mx);
        po[base + j * v.inner] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (std::int64_t j = 0; j < v.len; ++j) po[base + j * v.inner] *= inv;
    }
  }
  if (finish_output(out, {&x})) {
    auto xn = x.node();
    auto on = out.node();
    record([xn, on, v] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      const double* y = on->values.data();
      double* dx = ensure_grad(xn).data();
      for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t in = 0; in < v.inner; ++in) {
          const std::int64_t base = o * v.len * v.inner + in;
          double dot = 0.0;
          for (std::int64_t j = 0; j < v.len; ++j) dot += g[base + j * v.inner] * y[base + j * v.inner];
          for (std::int64_t j = 0; j < v.len; ++j) {
            const std::int64_t k = base + j * v.inner;
            dx[k] += y[k] * (g[k] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x, int axis) {
  AxisView v = axis_view(x.shape(), axis, "log_softmax");
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t o = 0; o < v.outer; ++o) {
    for (std::int64_t in = 0; in < v.inner; ++in) {
      const std::int64_t base = o * v.len * v.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < v.len; ++j) mx = std::max(mx, px[base + j * v.inner]);
      double sum = 0.0;
      for (std::int64_t j = 0; j < v.len; ++j) sum += std::exp(px[base + j * v.inner] - mx);
      const double lse = mx + std::log(sum);
      for (std::int64_t j = 0; j < v.len; ++j) {
        po[base + j * v.inner] = px[base + j * v.inner] - lse;
      }
    }
  }
  if (finish_output(out, {&x})) {
    auto xn = x.node();
    auto on = out.node();
    record([xn, on, v] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      const double* y = on->values.data();
      double* dx = ensure_grad(xn).data();
      for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t in = 0; in < v.inner; ++in) {
          const std::int64_t base = o * v.len * v.inner + in;
          double gsum = 0.0;
          for (std::int64_t j = 0; j < v.len; ++j) gsum += g[base + j * v.inner];
          for (std::int64_t j = 0; j < v.len; ++j) {
            const std::int64_t k = base + j * v.inner;
            dx[k] += g[k] - std::exp(y[k]) * gsum;
          }
        }
      }
    });
  }
  return out;
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (finish_output(out, {&x})) {
    auto xn = x.node();
    auto on = out.node();
    record([xn, on] {
      if (on->grad.empty()) return;
      const double g = on->grad[0];
      double* dx = ensure_grad(xn).data();
      const std::int64_t n = static_cast<std::int64_t>(xn->values.size());
      for (std::int64_t i = 0; i < n; ++i) dx[i] += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out = Tensor::scalar(acc * inv);
  if (finish_output(out, {&x})) {
    auto xn = x.node();
    auto on = out.node();
    record([xn, on, inv] {
      if (on->grad.empty()) return;
      const double g = on->grad[0] * inv;
      double* dx = ensure_grad(xn).data();
      const std::int64_t n = static_cast<std::int64_t>(xn->values.size());
      for (std::int64_t i = 0; i < n; ++i) dx[i] += g;
    });
  }
  return out;
}

Tensor reduce_mean(const Tensor& x, int axis) {
  AxisView v = axis_view(x.shape(), axis, "reduce_mean");
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = 1;
  Tensor out = Tensor::zeros(out_shape);
  const double* px = x.data();
  double* po = out.data();
  const double inv = 1.0 / static_cast<double>(v.len);
  for (std::int64_t o = 0; o < v.outer; ++o) {
    for (std::int64_t in = 0; in < v.inner; ++in) {
      double acc = 0.0;
      for (std::int64_t j = 0; j < v.len; ++j) acc += px[(o * v.len + j) * v.inner + in];
      po[o * v.inner + in] = acc * inv;
    }
  }
  if (finish_output(out, {&x})) {
    auto xn = x.node();
    auto on = out.node();
    record([xn, on, v, inv] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      double* dx = ensure_grad(xn).data();
      for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t in = 0; in < v.inner; ++in) {
          const double gi = g[o * v.inner + in] * inv;
          for (std::int64_t j = 0; j < v.len; ++j) dx[(o * v.len + j) * v.inner + in] += gi;
        }
      }
    });
  }
  return out;
}

Tensor reduce_max(const Tensor& x, int axis) {
  AxisView v = axis_view(x.shape(), axis, "reduce_max");
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = 1;
  Tensor out = Tensor::zeros(out_shape);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(v.outer * v.inner));
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t o = 0; o < v.outer; ++o) {
    for (std::int64_t in = 0; in < v.inner; ++in) {
      double best = -std::numeric_limits<double>::infinity();
      std::int64_t best_idx = -1;
      for (std::int64_t j = 0; j < v.len; ++j) {
        const std::int64_t k = (o * v.len + j) * v.inner + in;
        if (px[k] > best) {
          best = px[k];
          best_idx = k;
        }
      }
      po[o * v.inner + in] = best;
      (*argmax)[static_cast<size_t>(o * v.inner + in)] = best_idx;
    }
  }
  if (finish_output(out, {&x})) {
    auto xn = x.node();
    auto on = out.node();
    record([xn, on, argmax] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      double* dx = ensure_grad(xn).data();
      for (size_t i = 0; i < argmax->size(); ++i) dx[(*argmax)[i]] += g[i];
    });
  }
  return out;
}

// ---- shape ops -------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out = Tensor::zeros(std::move(shape));
  std::copy(x.values().begin(), x.values().end(), out.values().begin());
  if (finish_output(out, {&x})) {
    auto xn = x.node();
    auto on = out.node();
    record([xn, on] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      double* dx = ensure_grad(xn).data();
      const std::int64_t n = static_cast<std::int64_t>(xn->values.size());
      for (std::int64_t i = 0; i < n; ++i) dx[i] += g[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected 2-D tensor, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({n, m});
  const double* px = x.data();
  double* po = out.data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) po[static_cast<std::ptrdiff_t>(j) * m + i] = px[static_cast<std::ptrdiff_t>(i) * n + j];
  }
  if (finish_output(out, {&x})) {
    auto xn = x.node();
    auto on = out.node();
    record([xn, on, m, n] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      double* dx = ensure_grad(xn).data();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) dx[static_cast<std::ptrdiff_t>(i) * n + j] += g[static_cast<std::ptrdiff_t>(j) * m + i];
      }
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw UsageError("concat: no tensors given");
  const Shape& first = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(first.size())) {
    throw UsageError("concat: axis " + std::to_string(axis) + " out of range");
  }
  Shape out_shape = first;
  std::int64_t total_len = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != static_cast<int>(first.size())) {
      throw ShapeError("concat: rank mismatch between parts");
    }
    for (int i = 0; i < p.rank(); ++i) {
      if (i != axis && p.dim(i) != first[static_cast<size_t>(i)]) {
        throw ShapeError("concat: shape " + shape_str(p.shape()) + " incompatible with " +
                         shape_str(first) + " along axis " + std::to_string(axis));
      }
    }
    total_len += p.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = static_cast<int>(total_len);
  Tensor out = Tensor::zeros(out_shape);
  AxisView vo = axis_view(out_shape, axis, "concat");
  double* po = out.data();
  std::int64_t off = 0;
  for (const Tensor& p : parts) {
    const std::int64_t plen = p.dim(axis);
    const double* pp = p.data();
    for (std::int64_t o = 0; o < vo.outer; ++o) {
      std::copy(pp + o * plen * vo.inner, pp + (o + 1) * plen * vo.inner,
                po + (o * vo.len + off) * vo.inner);
    }
    off += plen;
  }
  bool any_grad = false;
  if (g_current_tape) {
    out.node()->tape_tag = g_current_tape;
    for (const Tensor& p : parts) any_grad = any_grad || p.requires_grad();
  }
  if (any_grad) {
    out.node()->requires_grad = true;
    std::vector<std::shared_ptr<TensorData>> nodes;
    std::vector<std::int64_t> lens;
    for (const Tensor& p : parts) {
      nodes.push_back(p.node());
      lens.push_back(p.dim(axis));
    }
    auto on = out.node();
    record([nodes, lens, on, vo] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      std::int64_t off = 0;
      for (size_t pi = 0; pi < nodes.size(); ++pi) {
        const std::int64_t plen = lens[pi];
        if (nodes[pi]->requires_grad) {
          double* dx = ensure_grad(nodes[pi]).data();
          for (std::int64_t o = 0; o < vo.outer; ++o) {
            const double* gseg = g + (o * vo.len + off) * vo.inner;
            double* dseg = dx + o * plen * vo.inner;
            for (std::int64_t i = 0; i < plen * vo.inner; ++i) dseg[i] += gseg[i];
          }
        }
        off += plen;
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
  AxisView v = axis_view(x.shape(), axis, "slice");
  if (start < 0 || len < 1 || start + len > v.len) {
    throw UsageError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of bounds for axis length " + std::to_string(v.len));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  Tensor out = Tensor::zeros(out_shape);
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t o = 0; o < v.outer; ++o) {
    std::copy(px + (o * v.len + start) * v.inner, px + (o * v.len + start + len) * v.inner,
              po + o * len * v.inner);
  }
  if (finish_output(out, {&x})) {
    auto xn = x.node();
    auto on = out.node();
    record([xn, on, v, start, len] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      double* dx = ensure_grad(xn).data();
      for (std::int64_t o = 0; o < v.outer; ++o) {
        const double* gseg = g + o * len * v.inner;
        double* dseg = dx + (o * v.len + start) * v.inner;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(len) * v.inner; ++i) dseg[i] += gseg[i];
      }
    });
  }
  return out;
}

Tensor select_row(const Tensor& matrix, int row) {
  if (matrix.rank() != 2) {
    throw ShapeError("select_row: expected 2-D tensor, got " + shape_str(matrix.shape()));
  }
  if (row < 0 || row >= matrix.dim(0)) {
    throw UsageError("select_row: row " + std::to_string(row) + " out of range");
  }
  const int n = matrix.dim(1);
  Tensor out = Tensor::zeros({1, n});
  std::copy(matrix.data() + static_cast<std::ptrdiff_t>(row) * n,
            matrix.data() + static_cast<std::ptrdiff_t>(row + 1) * n, out.data());
  if (finish_output(out, {&matrix})) {
    auto mn = matrix.node();
    auto on = out.node();
    record([mn, on, row, n] {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      double* dx = ensure_grad(mn).data() + static_cast<std::ptrdiff_t>(row) * n;
      for (int i = 0; i < n; ++i) dx[i] += g[i];
    });
  }
  return out;
}

Tensor take(const Tensor& x, std::int64_t flat_index) {
  if (flat_index < 0 || flat_index >= x.numel()) {
    throw UsageError("take: index " + std::to_string(flat_index) + " out of range for " +
                     std::to_string(x.numel()) + " elements");
  }
  Tensor out = Tensor::scalar(x.data()[flat_index]);
  if (finish_output(out, {&x})) {
    auto xn = x.node();
    auto on = out.node();
    record([xn, on, flat_index] {
      if (on->grad.empty()) return;
      ensure_grad(xn)[static_cast<size_t>(flat_index)] += on->grad[0];
    });
  }
  return out;
}

Tensor bilinear_sample(const Tensor& image, const Tensor& grid) {
  if (image.rank() != 3) {
    throw ShapeError("bilinear_sample: expected H×W×C image, got " + shape_str(image.shape()));
  }
  if (grid.rank() != 3 || grid.dim(2) != 2) {
    throw ShapeError("bilinear_sample: expected H'×W'×2 grid, got " + shape_str(grid.shape()));
  }
  for (double v : grid.values()) {
    if (!std::isfinite(v)) throw UsageError("bilinear_sample: grid contains non-finite coordinates");
  }
  const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const int oh = grid.dim(0), ow = grid.dim(1);
  Tensor out = Tensor::zeros({oh, ow, c});
  kern::bilinear_sample(image.data(), grid.data(), out.data(), h, w, c, oh, ow);
  if (finish_output(out, {&image, &grid})) {
    auto in = image.node();
    auto gn = grid.node();
    auto on = out.node();
    record([in, gn, on, h, w, c, oh, ow] {
      if (on->grad.empty()) return;
      double* dimg = in->requires_grad ? ensure_grad(in).data() : nullptr;
      double* dgrid = gn->requires_grad ? ensure_grad(gn).data() : nullptr;
      kern::bilinear_sample_grad(in->values.data(), gn->values.data(), on->grad.data(), dimg,
                                 dgrid, h, w, c, oh, ow);
    });
  }
  return out;
}

}  // namespace reads
