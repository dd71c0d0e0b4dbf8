#include "hmhi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace hmhi {

using detail::GradFn;
using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

const TensorImpl& require(const Tensor& t, const char* op) {
  if (!t.defined()) throw GraphError(std::string(op) + ": undefined tensor");
  return *t.impl();
}

using Backward = std::function<void(const TensorImpl&)>;

// Wraps a forward result and, when any input is on the tape, records how to
// push gradients back into it.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<ImplPtr> inputs, Backward apply) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  const bool track = g_grad_enabled &&
                     std::any_of(inputs.begin(), inputs.end(), [](const ImplPtr& p) { return p->requires_grad; });
  if (track) {
    impl->requires_grad = true;
    impl->grad_fn = std::make_shared<GradFn>();
    impl->grad_fn->inputs = std::move(inputs);
    impl->grad_fn->apply = std::move(apply);
  }
  return Tensor(std::move(impl));
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

struct BroadcastPlan {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const auto mismatch = [&] {
    return ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
  };
  if (a.size() != b.size()) throw mismatch();
  const std::size_t rank = a.size();
  plan.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      plan.out[i] = a[i];
    } else if (a[i] == 1) {
      plan.out[i] = b[i];
    } else {
      throw mismatch();
    }
  }
  std::vector<std::size_t> sa(rank), sb(rank);
  std::size_t ra = 1, rb = 1;
  for (std::size_t i = rank; i-- > 0;) {
    sa[i] = a[i] == 1 ? 0 : ra;
    sb[i] = b[i] == 1 ? 0 : rb;
    ra *= a[i];
    rb *= b[i];
  }
  const std::size_t n = shape_numel(plan.out);
  plan.ia.resize(n);
  plan.ib.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    plan.ia[flat] = oa;
    plan.ib[flat] = ob;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < plan.out[d]) break;
      oa -= sa[d] * idx[d];
      ob -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
  return plan;
}

// f(x, y) -> value; df(x, y, out) -> (d/dx, d/dy).
template <typename F, typename DF>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f, DF df) {
  const auto& A = require(a, name);
  const auto& B = require(b, name);
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(A.shape, B.shape, name));
  const std::size_t n = shape_numel(plan->out);
  std::vector<double> out(n);
  if (plan->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(A.data[i], B.data[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(A.data[plan->ia[i]], B.data[plan->ib[i]]);
  }
  TensorImpl* pa = a.impl().get();
  TensorImpl* pb = b.impl().get();
  Shape shape = plan->out;
  return make_result(std::move(shape), std::move(out), {a.impl(), b.impl()}, [pa, pb, plan, df](const TensorImpl& o) {
    const std::size_t count = o.data.size();
    double* ga = pa->requires_grad ? pa->grad_buffer().data() : nullptr;
    double* gb = pb->requires_grad ? pb->grad_buffer().data() : nullptr;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t ia = plan->same ? i : plan->ia[i];
      const std::size_t ib = plan->same ? i : plan->ib[i];
      const auto [dx, dy] = df(pa->data[ia], pb->data[ib], o.data[i]);
      if (ga) ga[ia] += o.grad[i] * dx;
      if (gb) gb[ib] += o.grad[i] * dy;
    }
  });
}

// f(x) -> value; df(x, y) -> dy/dx.
template <typename F, typename DF>
Tensor unary_op(const Tensor& x, const char* name, F f, DF df) {
  const auto& X = require(x, name);
  std::vector<double> out(X.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(X.data[i]);
  TensorImpl* px = x.impl().get();
  return make_result(X.shape, std::move(out), {x.impl()}, [px, df](const TensorImpl& o) {
    auto& g = px->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * df(px->data[i], o.data[i]);
  });
}

double clamp_sigmoid_input(double v) { return std::clamp(v, -kSigmoidClamp, kSigmoidClamp); }

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
  check_shape(shape);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.uniform(lo, hi);
  return from(std::move(shape), std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return require(*this, "shape").shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("dim: axis out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return require(*this, "numel").data.size(); }

std::span<const double> Tensor::data() const { return require(*this, "data").data; }

std::span<double> Tensor::mutable_data() {
  require(*this, "mutable_data");
  return impl_->data;
}

double Tensor::item() const {
  const auto& d = require(*this, "item").data;
  if (d.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(impl_->shape));
  return d[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("at: index rank does not match " + shape_str(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw ShapeError("at: index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  require(*this, "set_requires_grad");
  if (impl_->grad_fn) throw GraphError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = on;
}

bool Tensor::is_leaf() const { return impl_ && !impl_->grad_fn; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw GraphError("tensor has no gradient; call backward() first");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require(*this, "mutable_grad");
  return impl_->grad_buffer();
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const {
  const auto& self = require(*this, "detach");
  return from(self.shape, self.data, false);
}

Tensor Tensor::clone() const {
  const auto& self = require(*this, "clone");
  return from(self.shape, self.data, self.requires_grad && !self.grad_fn);
}

void Tensor::backward() const {
  const auto& self = require(*this, "backward");
  if (self.data.size() != 1) throw GraphError("backward() needs a scalar loss, got shape " + shape_str(self.shape));
  if (!impl_->grad_fn) {
    if (!impl_->requires_grad) throw GraphError("backward(): loss is not connected to any tensor requiring grad");
    impl_->grad_buffer()[0] += 1.0;
    return;
  }
  if (impl_->grad_fn->consumed) {
    throw GraphError("backward(): tape already consumed; rerun the forward pass before calling backward again");
  }

  // Post-order DFS gives inputs before outputs; walk it in reverse.
  std::vector<ImplPtr> order;
  std::unordered_set<const TensorImpl*> visited;
  std::vector<std::pair<ImplPtr, std::size_t>> stack;
  stack.emplace_back(impl_, 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* fn = node->grad_fn.get();
    if (fn && next < fn->inputs.size()) {
      const ImplPtr& child = fn->inputs[next++];
      if (child->requires_grad && child->grad_fn && !visited.count(child.get())) {
        if (child->grad_fn->consumed) throw GraphError("backward(): graph contains an already consumed tape segment");
        visited.insert(child.get());
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  impl_->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl& node = **it;
    if (!node.grad.empty()) node.grad_fn->apply(node);
    node.grad_fn->consumed = true;
    node.grad_fn->apply = nullptr;
    node.grad.clear();
    node.grad.shrink_to_fit();
  }
  for (auto& node : order) node->grad_fn->inputs.clear();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- linear algebra -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& A = require(a, "matmul");
  const auto& B = require(b, "matmul");
  if (A.shape.size() != 2 || B.shape.size() != 2 || A.shape[1] != B.shape[0]) {
    throw ShapeError("matmul: cannot multiply " + shape_str(A.shape) + " by " + shape_str(B.shape));
  }
  const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A.data[i * k + p];
      const double* brow = B.data.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  TensorImpl* pa = a.impl().get();
  TensorImpl* pb = b.impl().get();
  return make_result({m, n}, std::move(out), {a.impl(), b.impl()}, [pa, pb, m, k, n](const TensorImpl& o) {
    if (pa->requires_grad) {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += o.grad[i * n + j] * pb->data[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (pb->requires_grad) {
      auto& gb = pb->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa->data[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * o.grad[i * n + j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& x) {
  const auto& X = require(x, "transpose");
  if (X.shape.size() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(X.shape));
  const std::size_t r = X.shape[0], c = X.shape[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = X.data[i * c + j];
  TensorImpl* px = x.impl().get();
  return make_result({c, r}, std::move(out), {x.impl()}, [px, r, c](const TensorImpl& o) {
    auto& g = px->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
  });
}

// ---- elementwise ----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return std::pair{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return std::pair{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double) { return std::pair{y, x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double out) { return std::pair{1.0 / y, -out / y}; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary_op(
      x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary_op(
      x, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor pow_scalar(const Tensor& x, double exponent) {
  return unary_op(
      x, "pow_scalar", [exponent](double v) { return exponent == 0.0 ? 1.0 : std::pow(v, exponent); },
      [exponent](double v, double) { return exponent == 0.0 ? 0.0 : exponent * std::pow(v, exponent - 1.0); });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-clamp_sigmoid_input(v))); },
      [](double v, double y) { return std::abs(v) > kSigmoidClamp ? 0.0 : y * (1.0 - y); });
}

Tensor log_sigmoid(const Tensor& x) {
  return unary_op(
      x, "log_sigmoid", [](double v) { return std::min(v, 0.0) - std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        // 1 - sigmoid(v), evaluated without cancellation.
        const double e = std::exp(-std::abs(v));
        return v >= 0.0 ? e / (1.0 + e) : 1.0 / (1.0 + e);
      });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, "exp", [](double v) { return std::exp(std::clamp(v, -kExpClamp, kExpClamp)); },
      [](double v, double y) { return std::abs(v) > kExpClamp ? 0.0 : y; });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x, "log", [](double v) { return std::log(std::max(v, kLogFloor)); },
      [](double v, double) { return v < kLogFloor ? 0.0 : 1.0 / v; });
}

// ---- reductions -------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
  const auto& X = require(x, "sum_all");
  double acc = 0.0;
  for (double v : X.data) acc += v;
  TensorImpl* px = x.impl().get();
  return make_result({1}, {acc}, {x.impl()}, [px](const TensorImpl& o) {
    for (auto& g : px->grad_buffer()) g += o.grad[0];
  });
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

namespace {

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out.empty()) out.push_back(1);
  }
  return out;
}

}  // namespace

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto& X = require(x, "sum");
  const auto s = split_axis(X.shape, axis, "sum");
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += X.data[(o * s.extent + e) * s.inner + i];
  TensorImpl* px = x.impl().get();
  return make_result(reduced_shape(X.shape, axis, keepdim), std::move(out), {x.impl()}, [px, s](const TensorImpl& o) {
    auto& g = px->grad_buffer();
    for (std::size_t a = 0; a < s.outer; ++a)
      for (std::size_t e = 0; e < s.extent; ++e)
        for (std::size_t i = 0; i < s.inner; ++i) g[(a * s.extent + e) * s.inner + i] += o.grad[a * s.inner + i];
  });
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto s = split_axis(x.shape(), axis, "mean");
  return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(s.extent));
}

Tensor max(const Tensor& x, std::size_t axis, bool keepdim) {
  const auto& X = require(x, "max");
  const auto s = split_axis(X.shape, axis, "max");
  std::vector<double> out(s.outer * s.inner);
  auto arg = std::make_shared<std::vector<std::size_t>>(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = o * s.extent * s.inner + i;
      for (std::size_t e = 1; e < s.extent; ++e) {
        const std::size_t idx = (o * s.extent + e) * s.inner + i;
        if (X.data[idx] > X.data[best]) best = idx;
      }
      out[o * s.inner + i] = X.data[best];
      (*arg)[o * s.inner + i] = best;
    }
  }
  TensorImpl* px = x.impl().get();
  return make_result(reduced_shape(X.shape, axis, keepdim), std::move(out), {x.impl()}, [px, arg](const TensorImpl& o) {
    auto& g = px->grad_buffer();
    for (std::size_t j = 0; j < arg->size(); ++j) g[(*arg)[j]] += o.grad[j];
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& X = require(x, "softmax");
  const auto s = split_axis(X.shape, axis, "softmax");
  for (double v : X.data) {
    if (std::isnan(v)) throw NumericError("softmax: NaN input");
  }
  std::vector<double> out(X.data.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double top = X.data[base];
      for (std::size_t e = 1; e < s.extent; ++e) top = std::max(top, X.data[base + e * s.inner]);
      double denom = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(X.data[base + e * s.inner] - top);
        out[base + e * s.inner] = v;
        denom += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= denom;
    }
  }
  TensorImpl* px = x.impl().get();
  return make_result(X.shape, std::move(out), {x.impl()}, [px, s](const TensorImpl& o) {
    auto& g = px->grad_buffer();
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = a * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += o.grad[base + e * s.inner] * o.data[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t idx = base + e * s.inner;
          g[idx] += o.data[idx] * (o.grad[idx] - dot);
        }
      }
    }
  });
}

// ---- shape ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  const auto& X = require(x, "reshape");
  check_shape(shape);
  if (shape_numel(shape) != X.data.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(X.shape) + " as " + shape_str(shape));
  }
  TensorImpl* px = x.impl().get();
  return make_result(std::move(shape), X.data, {x.impl()}, [px](const TensorImpl& o) {
    auto& g = px->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = require(parts[0], "concat").shape;
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<ImplPtr> inputs;
  for (const auto& p : parts) {
    const auto& s = require(p, "concat").shape;
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    out_shape[axis] += s[axis];
    inputs.push_back(p.impl());
  }
  const auto so = split_axis(out_shape, axis, "concat");
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t ext = p.shape()[axis];
    offsets.push_back(offset);
    const auto& d = p.impl()->data;
    for (std::size_t o = 0; o < so.outer; ++o)
      for (std::size_t e = 0; e < ext; ++e)
        std::copy_n(d.data() + (o * ext + e) * so.inner, so.inner, out.data() + (o * so.extent + offset + e) * so.inner);
    offset += ext;
  }
  std::vector<TensorImpl*> raw;
  for (auto& p : inputs) raw.push_back(p.get());
  return make_result(std::move(out_shape), std::move(out), inputs, [raw, offsets, so, axis](const TensorImpl& o) {
    for (std::size_t k = 0; k < raw.size(); ++k) {
      if (!raw[k]->requires_grad) continue;
      const std::size_t ext = raw[k]->shape[axis];
      auto& g = raw[k]->grad_buffer();
      for (std::size_t a = 0; a < so.outer; ++a)
        for (std::size_t e = 0; e < ext; ++e)
          for (std::size_t i = 0; i < so.inner; ++i)
            g[(a * ext + e) * so.inner + i] += o.grad[(a * so.extent + offsets[k] + e) * so.inner + i];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& X = require(x, "slice");
  const auto s = split_axis(X.shape, axis, "slice");
  if (length == 0 || start + length > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of bounds for axis " + std::to_string(axis) + " of " + shape_str(X.shape));
  }
  Shape out_shape = X.shape;
  out_shape[axis] = length;
  std::vector<double> out(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(X.data.data() + (o * s.extent + start) * s.inner, length * s.inner, out.data() + o * length * s.inner);
  TensorImpl* px = x.impl().get();
  return make_result(std::move(out_shape), std::move(out), {x.impl()}, [px, s, start, length](const TensorImpl& o) {
    auto& g = px->grad_buffer();
    for (std::size_t a = 0; a < s.outer; ++a)
      for (std::size_t j = 0; j < length * s.inner; ++j)
        g[(a * s.extent + start) * s.inner + j] += o.grad[a * length * s.inner + j];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const auto& X = require(x, "gather_rows");
  if (X.shape.size() != 2) throw ShapeError("gather_rows: expected rank 2, got " + shape_str(X.shape));
  if (rows.empty()) throw ShapeError("gather_rows: empty row list");
  const std::size_t n = X.shape[0], c = X.shape[1];
  std::vector<double> out(rows.size() * c);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) throw ShapeError("gather_rows: row index out of range for " + shape_str(X.shape));
    std::copy_n(X.data.data() + rows[r] * c, c, out.data() + r * c);
  }
  TensorImpl* px = x.impl().get();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result({rows.size(), c}, std::move(out), {x.impl()}, [px, idx, c](const TensorImpl& o) {
    auto& g = px->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < c; ++j) g[idx[r] * c + j] += o.grad[r * c + j];
  });
}

// ---- spatial ----------------------------------------------------------------------------

namespace {

void require_map(const TensorImpl& t, const char* op) {
  if (t.shape.size() != 3) throw ShapeError(std::string(op) + ": expected a CxHxW map, got " + shape_str(t.shape));
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  const auto& X = require(x, "conv2d");
  const auto& K = require(kernel, "conv2d");
  require_map(X, "conv2d");
  if (K.shape.size() != 4 || K.shape[2] != K.shape[3] || K.shape[2] % 2 == 0 || K.shape[1] != X.shape[0]) {
    throw ShapeError("conv2d: kernel " + shape_str(K.shape) + " incompatible with input " + shape_str(X.shape) +
                     " (need Cout x Cin x k x k with odd k)");
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t cin = X.shape[0], h = X.shape[1], w = X.shape[2];
  const std::size_t cout = K.shape[0], k = K.shape[2];
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw ShapeError("conv2d: output would be empty for input " + shape_str(X.shape) + " and kernel " +
                     shape_str(K.shape));
  }
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (w + 2 * padding - k) / stride + 1;

  // Visits every (output, kernel tap, input) triple that lands inside the image.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t kidx = ((co * cin + ci) * k + ky) * k + kx;
            for (std::size_t oy = 0; oy < ho; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t ox = 0; ox < wo; ++ox) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                fn((co * ho + oy) * wo + ox, kidx, (ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix));
              }
            }
          }
  };

  std::vector<double> out(cout * ho * wo, 0.0);
  for_each_tap([&](std::size_t o, std::size_t kk, std::size_t i) { out[o] += K.data[kk] * X.data[i]; });

  TensorImpl* px = x.impl().get();
  TensorImpl* pk = kernel.impl().get();
  return make_result({cout, ho, wo}, std::move(out), {x.impl(), kernel.impl()}, [px, pk, for_each_tap](const TensorImpl& o) {
    double* gx = px->requires_grad ? px->grad_buffer().data() : nullptr;
    double* gk = pk->requires_grad ? pk->grad_buffer().data() : nullptr;
    for_each_tap([&](std::size_t oi, std::size_t kk, std::size_t i) {
      const double g = o.grad[oi];
      if (gx) gx[i] += g * pk->data[kk];
      if (gk) gk[kk] += g * px->data[i];
    });
  });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  const auto& X = require(x, "upsample_nearest");
  require_map(X, "upsample_nearest");
  if (factor == 0) throw ShapeError("upsample_nearest: factor must be positive");
  const std::size_t c = X.shape[0], h = X.shape[1], w = X.shape[2];
  const std::size_t ho = h * factor, wo = w * factor;
  std::vector<double> out(c * ho * wo);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx) out[(ch * ho + y) * wo + xx] = X.data[(ch * h + y / factor) * w + xx / factor];
  TensorImpl* px = x.impl().get();
  return make_result({c, ho, wo}, std::move(out), {x.impl()}, [px, c, h, w, ho, wo, factor](const TensorImpl& o) {
    auto& g = px->grad_buffer();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx) g[(ch * h + y / factor) * w + xx / factor] += o.grad[(ch * ho + y) * wo + xx];
  });
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double w_lo, w_hi;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t factor) {
  std::vector<Tap> taps(in * factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    const double frac = src - static_cast<double>(lo);
    taps[o] = {lo, hi, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, std::size_t factor) {
  const auto& X = require(x, "upsample_bilinear");
  require_map(X, "upsample_bilinear");
  if (factor == 0) throw ShapeError("upsample_bilinear: factor must be positive");
  const std::size_t c = X.shape[0], h = X.shape[1], w = X.shape[2];
  const std::size_t ho = h * factor, wo = w * factor;
  auto ty = std::make_shared<std::vector<Tap>>(bilinear_taps(h, factor));
  auto tx = std::make_shared<std::vector<Tap>>(bilinear_taps(w, factor));
  std::vector<double> out(c * ho * wo);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = X.data.data() + ch * h * w;
    for (std::size_t y = 0; y < ho; ++y) {
      const Tap& a = (*ty)[y];
      for (std::size_t xx = 0; xx < wo; ++xx) {
        const Tap& b = (*tx)[xx];
        out[(ch * ho + y) * wo + xx] = a.w_lo * (b.w_lo * src[a.lo * w + b.lo] + b.w_hi * src[a.lo * w + b.hi]) +
                                       a.w_hi * (b.w_lo * src[a.hi * w + b.lo] + b.w_hi * src[a.hi * w + b.hi]);
      }
    }
  }
  TensorImpl* px = x.impl().get();
  return make_result({c, ho, wo}, std::move(out), {x.impl()}, [px, ty, tx, c, h, w, ho, wo](const TensorImpl& o) {
    auto& g = px->grad_buffer();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* dst = g.data() + ch * h * w;
      for (std::size_t y = 0; y < ho; ++y) {
        const Tap& a = (*ty)[y];
        for (std::size_t xx = 0; xx < wo; ++xx) {
          const Tap& b = (*tx)[xx];
          const double gv = o.grad[(ch * ho + y) * wo + xx];
          dst[a.lo * w + b.lo] += gv * a.w_lo * b.w_lo;
          dst[a.lo * w + b.hi] += gv * a.w_lo * b.w_hi;
          dst[a.hi * w + b.lo] += gv * a.w_hi * b.w_lo;
          dst[a.hi * w + b.hi] += gv * a.w_hi * b.w_hi;
        }
      }
    }
  });
}

namespace {

void require_pool(const TensorImpl& X, std::size_t window, const char* op) {
  require_map(X, op);
  if (window == 0 || X.shape[1] % window != 0 || X.shape[2] % window != 0) {
    throw ShapeError(std::string(op) + ": window " + std::to_string(window) + " does not tile " + shape_str(X.shape));
  }
}

}  // namespace

Tensor avg_pool2d(const Tensor& x, std::size_t window) {
  const auto& X = require(x, "avg_pool2d");
  require_pool(X, window, "avg_pool2d");
  const std::size_t c = X.shape[0], h = X.shape[1], w = X.shape[2];
  const std::size_t ho = h / window, wo = w / window;
  const double inv = 1.0 / static_cast<double>(window * window);
  std::vector<double> out(c * ho * wo, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) out[(ch * ho + y / window) * wo + xx / window] += X.data[(ch * h + y) * w + xx];
  for (auto& v : out) v *= inv;
  TensorImpl* px = x.impl().get();
  return make_result({c, ho, wo}, std::move(out), {x.impl()}, [px, c, h, w, ho, wo, window, inv](const TensorImpl& o) {
    auto& g = px->grad_buffer();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx)
          g[(ch * h + y) * w + xx] += inv * o.grad[(ch * ho + y / window) * wo + xx / window];
  });
}

Tensor max_pool2d(const Tensor& x, std::size_t window) {
  const auto& X = require(x, "max_pool2d");
  require_pool(X, window, "max_pool2d");
  const std::size_t c = X.shape[0], h = X.shape[1], w = X.shape[2];
  const std::size_t ho = h / window, wo = w / window;
  std::vector<double> out(c * ho * wo);
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (ch * h + oy * window) * w + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = (ch * h + oy * window + dy) * w + ox * window + dx;
            if (X.data[idx] > X.data[best]) best = idx;
          }
        out[(ch * ho + oy) * wo + ox] = X.data[best];
        (*arg)[(ch * ho + oy) * wo + ox] = best;
      }
  TensorImpl* px = x.impl().get();
  return make_result({c, ho, wo}, std::move(out), {x.impl()}, [px, arg](const TensorImpl& o) {
    auto& g = px->grad_buffer();
    for (std::size_t j = 0; j < arg->size(); ++j) g[(*arg)[j]] += o.grad[j];
  });
}

Tensor map_to_tokens(const Tensor& map) {
  const auto& s = map.shape();
  if (s.size() != 3) throw ShapeError("map_to_tokens: expected CxHxW, got " + shape_str(s));
  return transpose(reshape(map, {s[0], s[1] * s[2]}));
}

Tensor tokens_to_map(const Tensor& tokens, std::size_t height, std::size_t width) {
  const auto& s = tokens.shape();
  if (s.size() != 2 || s[0] != height * width) {
    throw ShapeError("tokens_to_map: " + shape_str(s) + " is not " + std::to_string(height * width) + " tokens");
  }
  return reshape(transpose(tokens), {s[1], height, width});
}

}  // namespace hmhi
