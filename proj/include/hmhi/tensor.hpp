#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hmhi/errors.hpp"
#include "hmhi/rng.hpp"

namespace hmhi {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct TensorImpl;

// Backward closure recorded by an op. `apply` reads the output gradient from
// `out.grad` and accumulates into the inputs that participate in the tape.
struct GradFn {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> apply;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::shared_ptr<GradFn> grad_fn;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major float64 tensor with an optional reverse-mode tape.
///
/// Copies are shallow: two Tensor values may refer to the same storage, which
/// is how parameters are shared between blocks and the parameter store.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access; does not record anything on the tape.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Same values, no tape history.
  Tensor detach() const;
  /// Deep copy of the values (and requires_grad flag), no tape history.
  Tensor clone() const;

  /// Propagates d(this)/d(leaf) into every reachable leaf with requires_grad.
  /// The recorded tape is released afterwards; a second call on the same graph
  /// throws GraphError.
  void backward() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Thread-local switch for tape recording.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);  // rank 2 only

// ---- elementwise ----------------------------------------------------------
// Binary ops accept equal-rank operands whose dims either match or are 1.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor pow_scalar(const Tensor& x, double exponent);

Tensor relu(const Tensor& x);  // derivative at 0 is 0
Tensor sigmoid(const Tensor& x);  // input clamped to [-30, 30]
Tensor log_sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);  // input clamped to [-700, 700]
Tensor log(const Tensor& x);  // input clamped below at 1e-300

inline constexpr double kSigmoidClamp = 30.0;
inline constexpr double kExpClamp = 700.0;
inline constexpr double kLogFloor = 1e-300;

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- reductions -----------------------------------------------------------

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = true);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = true);
// Gradient goes to the first maximal element.
Tensor max(const Tensor& x, std::size_t axis, bool keepdim = true);
Tensor softmax(const Tensor& x, std::size_t axis);

// ---- shape ----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

// ---- spatial, on C x H x W maps ---------------------------------------------

/// Cross-correlation (no kernel flip) of x[Cin,H,W] with kernel[Cout,Cin,k,k].
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t padding);
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
/// Half-pixel-centre bilinear resampling with edge clamping.
Tensor upsample_bilinear(const Tensor& x, std::size_t factor);
Tensor avg_pool2d(const Tensor& x, std::size_t window);
Tensor max_pool2d(const Tensor& x, std::size_t window);

// Token layout helpers: [C,H,W] <-> [H*W, C].
Tensor map_to_tokens(const Tensor& map);
Tensor tokens_to_map(const Tensor& tokens, std::size_t height, std::size_t width);

}  // namespace hmhi
