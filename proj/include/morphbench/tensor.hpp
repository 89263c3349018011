#pragma once

// Dense float64 tensors with tape-free reverse-mode differentiation.
//
// A Tensor is a cheap handle to a graph node. Ops build new nodes that keep
// their parents alive; backward() walks the graph reachable from a scalar
// loss in reverse topological order and accumulates into the grad buffer of
// every node with requires_grad. Gradients accumulate across calls until
// zero_grad().

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace morphbench {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Buffer = Eigen::ArrayXd;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Abs,
  Sqrt,
  Neg,
  Exp,
  Log,
  Tanh,
  ClampMin,
  Sum,
  Mean,
  Max,
  MatMul,
  Conv2d,
  Downsample2x,
  Reshape,
  Concat,
  Select,
};

namespace detail {

struct Node;

// Receives the upstream gradient and one accumulator per parent; an
// accumulator is null when that parent does not need a gradient.
using BackwardRule = std::function<void(const Buffer& grad_out, std::span<Buffer* const> parent_grads)>;

struct Node {
  OpKind op = OpKind::Leaf;
  Shape shape;
  Buffer value;
  bool requires_grad = false;
  std::optional<Buffer> grad;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardRule backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor();

  static Tensor from(Shape shape, Buffer values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);

  // Row-major copy of an Eigen matrix as a 2-D tensor.
  template <typename Derived>
  static Tensor from_matrix(const Eigen::DenseBase<Derived>& m, bool requires_grad = false) {
    RowMatrix<double> rm = m;
    return from({rm.rows(), rm.cols()}, Eigen::Map<const Buffer>(rm.data(), rm.size()), requires_grad);
  }

  const Shape& shape() const;
  Index dim(std::size_t axis) const;
  std::size_t rank() const;
  Index size() const;
  OpKind op() const;

  const Buffer& value() const;
  double item() const;
  // Row-major view of a 2-D tensor.
  Eigen::Map<const RowMatrix<double>> matrix() const;

  bool requires_grad() const;
  bool has_grad() const;
  // Throws if no gradient has been accumulated.
  const Buffer& grad() const;
  void zero_grad();

  // Overwrite the values of a leaf in place (optimizer updates).
  void assign(const Buffer& values);

  // A new leaf sharing no graph history.
  Tensor detach() const;

  void backward() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  static Tensor make_op(OpKind op, Shape shape, Buffer value, std::vector<Tensor> parents,
                        detail::BackwardRule backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node);
  std::shared_ptr<detail::Node> node_;
};

// Elementwise. One operand may be a single-element tensor, which broadcasts.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor pow(const Tensor& base, const Tensor& exponent);
Tensor pow(const Tensor& base, double exponent);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, double b);
Tensor sub(double a, const Tensor& b);
Tensor mul(const Tensor& a, double b);
Tensor div(const Tensor& a, double b);

Tensor abs(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
// max(a, floor); gradient passes only where a > floor.
Tensor clamp_min(const Tensor& a, double floor);

// Full reductions to a rank-0 tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor max(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);

// Valid-mode cross-correlation. x is [c,h,w] with kernel [c,kh,kw], giving
// [1,oh,ow]; or x is [h,w] with kernel [kh,kw], giving [oh,ow].
Tensor conv2d(const Tensor& x, const Tensor& kernel, Index stride = 1);

// 2x2 mean pooling with stride 2 over the trailing two axes; an odd last
// row/column is dropped.
Tensor downsample2x(const Tensor& x);

Tensor reshape(const Tensor& a, Shape shape);
// Concatenate along axis 0.
Tensor concat(std::span<const Tensor> parts);
// Slice index i of axis 0, dropping that axis.
Tensor select(const Tensor& a, Index i);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator+(double a, const Tensor& b) { return add(b, a); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, b); }
inline Tensor operator-(double a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator/(const Tensor& a, double b) { return div(a, b); }

using ScalarFunction = std::function<Tensor(const Tensor&)>;

// Largest |analytic - central difference| / max(1, |central difference|)
// over all coordinates of x. f must return a single-element tensor.
double grad_check(const ScalarFunction& f, const Tensor& x, double eps = 1e-5);

}  // namespace morphbench
