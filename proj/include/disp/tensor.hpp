#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace disp {

using Shape = std::vector<std::size_t>;

namespace detail {
struct TensorNode;
}

/// Dense n-dimensional double tensor with an optional computation record for
/// reverse-mode differentiation. Copying a Tensor copies the handle, not the
/// storage; the recorded graph lives as long as a handle to its output does
/// and is dropped with the last handle after backward().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t dim(std::size_t i) const { return shape().at(i); }

  std::span<const double> values() const;
  /// Mutable view of a leaf's storage (parameter updates). Mutating a tensor
  /// that participates in a live graph is outside the contract.
  std::span<double> values_mut();

  /// Value of a scalar (size-1) tensor.
  double item() const;

  bool requires_grad() const;
  /// Gradient storage; materialized (zero-filled) on first access.
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  /// Copy of the values with no recorded history.
  Tensor detached(bool requires_grad = false) const;

  detail::TensorNode* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor make_op_result(std::string op, Shape shape, std::vector<double> values,
                               std::vector<Tensor> inputs,
                               std::function<void(detail::TensorNode&)> backprop);
};

namespace detail {
/// One vertex of the computation DAG: the produced value plus the record
/// (op name, input references, backward rule) needed to propagate gradients.
struct TensorNode {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // materialized lazily, same extent as values

  std::string op;  // empty for leaves
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(TensorNode&)> backprop;

  std::size_t size() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};
}  // namespace detail

// Differentiable primitives. Each op validates shapes (throwing NumericError
// with the op name and offending shapes) and appends a computation record
// when any input requires a gradient.

Tensor matmul(const Tensor& a, const Tensor& b);           // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                         // [m,n] -> [n,m]
Tensor add(const Tensor& a, const Tensor& b);              // same shape, or [m,n] + [n]
Tensor mul(const Tensor& a, const Tensor& b);              // elementwise
Tensor scale(const Tensor& a, double c);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor abs(const Tensor& a);                               // subgradient 0 at 0
Tensor mean(const Tensor& a);                              // -> scalar
Tensor sum(const Tensor& a);                               // -> scalar
Tensor dot(const Tensor& a, const Tensor& b);              // 1-D -> scalar

/// Row-wise l2 normalization of a [m,n] matrix (or a single 1-D vector).
/// Rows with norm below epsilon_norm are rejected as degenerate.
Tensor l2_normalize(const Tensor& a);
inline constexpr double kEpsilonNorm = 1e-12;

/// Valid cross-correlation with zero padding. x: [m,cin,h,w],
/// w: [cout,cin,k,k], bias: [cout] (pass an undefined Tensor for no bias).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::size_t stride, std::size_t padding);

/// Global average pooling: [m,c,h,w] -> [m,c].
Tensor avg_pool_global(const Tensor& x);

/// Mean softmax cross-entropy of [m,c] logits against integer labels.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// Reverse-mode sweep from a scalar loss. Visits each record exactly once in
/// reverse topological order; leaf gradients accumulate across calls until
/// zero_grad() is used.
void backward(const Tensor& loss);

/// Max over coordinates of |analytic - central difference| /
/// max(|analytic|, |central|, 1e-12) for a scalar-valued f at x.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& x, double step);

}  // namespace disp
