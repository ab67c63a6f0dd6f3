#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// Every op below records a closure on the output node when any input
// requires a gradient and recording is enabled. `backward()` on a scalar
// output walks its ancestors in reverse topological order and accumulates
// gradients into every leaf that requires one.

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvdis/errors.hpp"

namespace mvdis {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

std::string shape_to_string(const Shape& shape);
Index shape_size(const Shape& shape);

/// Disables graph recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

namespace detail {

template <typename Scalar>
struct Node {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Array value;
  Array grad;
  bool grad_defined = false;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Array& g) {
    if (!requires_grad) return;
    if (grad_defined) {
      grad += g;
    } else {
      grad = g;
      grad_defined = true;
    }
  }
};

}  // namespace detail

template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using NodePtr = std::shared_ptr<detail::Node<Scalar>>;

  Tensor();
  Tensor(Shape shape, Array data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::initializer_list<Scalar> values,
                            bool requires_grad = false);
  /// Copies a 2-D matrix into a tensor of shape (rows, cols).
  static Tensor from_matrix(const Matrix& m, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int axis) const;
  Index size() const { return node_->value.size(); }

  const Array& data() const { return node_->value; }
  /// Mutable access for optimizers. Only valid on leaves.
  Array& mutable_data();
  Scalar item() const;
  Scalar operator[](Index i) const { return node_->value[i]; }

  /// Row-major view with all leading axes collapsed into rows.
  ConstMatrixMap matrix() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad_defined; }
  const Array& grad() const;
  /// Drops the gradient so the parameter reads as untouched.
  void zero_grad();

  /// New leaf sharing no graph with this tensor.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  void backward() const;

  const NodePtr& node() const { return node_; }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

// Linear algebra.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape);

// Elementwise, with numpy-style broadcasting for binary ops.
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s);
template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& a, Scalar s);
template <typename Scalar>
Tensor<Scalar> neg(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& a);
/// Throws DomainError on any non-positive element.
template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> sqrt(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& a, Scalar lo, Scalar hi);
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a);

// Reductions. `axis` may be negative (counted from the back).
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a, int axis, bool keepdim = false);
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a, int axis, bool keepdim = false);
/// Population variance (divides by the axis length).
template <typename Scalar>
Tensor<Scalar> variance(const Tensor<Scalar>& a, int axis, bool keepdim = false);
/// sqrt(variance + eps).
template <typename Scalar>
Tensor<Scalar> std_dev(const Tensor<Scalar>& a, int axis, Scalar eps, bool keepdim = false);
template <typename Scalar>
Tensor<Scalar> logsumexp(const Tensor<Scalar>& a, int axis, bool keepdim = false);

// Feature-axis (last axis) manipulation.
template <typename Scalar>
Tensor<Scalar> concat_features(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> slice_features(const Tensor<Scalar>& a, Index begin, Index count);
/// Divides each last-axis row by max(||row||, eps).
template <typename Scalar>
Tensor<Scalar> l2_normalize(const Tensor<Scalar>& a, Scalar eps);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a) { return neg(a); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, Scalar s) { return scale(a, s); }
template <typename Scalar>
Tensor<Scalar> operator*(Scalar s, const Tensor<Scalar>& a) { return scale(a, s); }

using TensorD = Tensor<double>;
using TensorF = Tensor<float>;

}  // namespace mvdis
