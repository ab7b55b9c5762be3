#pragma once

// Define-by-run reverse-mode differentiation over dense tensors.
//
// Every primitive returns a Var whose node records its parents and the
// forward value. backward() walks the DAG in reverse topological order and
// accumulates gradients into every node that requires one. Nodes that do not
// depend on a parameter drop their parents immediately, so inference under
// NoGradGuard keeps memory proportional to the live values only.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "mclstm/tensor.hpp"

namespace mclstm::engine {

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Affine,
  Matmul,
  BatchMatVec,
  Sigmoid,
  Tanh,
  Relu,
  Exp,
  Log,
  Sqrt,
  Softmax,
  L1Normalize,
  Sum,
  SumAxis,
  Concat,
  Slice,
  Reshape,
};

std::string_view op_name(OpKind kind);

struct Node {
  OpKind op = OpKind::Leaf;
  Tensor value;
  Tensor grad;  // empty until backward touches the node
  std::vector<std::shared_ptr<Node>> parents;
  bool requires_grad = false;

  // Attributes of the producing primitive.
  std::size_t axis = 0;
  std::size_t start = 0;
  double alpha = 1.0;
  double beta = 0.0;

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;
  ~Node();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  OpKind op() const { return node_->op; }
  bool defined() const { return static_cast<bool>(node_); }

  /// Accumulated gradient; a zero tensor of the value's shape if backward never reached it.
  Tensor grad() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// Disables graph recording on this thread while alive.
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

// Binary elementwise ops. The second operand may broadcast when its shape is
// a trailing suffix of the first operand's shape, or when it holds one element.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

/// alpha * x + beta.
Var affine(const Var& x, double alpha, double beta);
inline Var scale(const Var& x, double alpha) { return affine(x, alpha, 0.0); }
inline Var one_minus(const Var& x) { return affine(x, -1.0, 1.0); }

/// (m x k) . (k x n)
Var matmul(const Var& a, const Var& b);

/// out[b, p] = sum_q A[p, q] v[b, q] for a shared rank-2 A, or
/// out[b, p] = sum_q A[b, p, q] v[b, q] for a per-sample rank-3 A.
Var batch_matvec(const Var& a, const Var& v);

Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var relu(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var sqrt(const Var& x);

/// Softmax along `axis`; subtracts the per-slice max before exponentiating.
Var softmax(const Var& x, std::size_t axis);

/// x / sum(|x|) along `axis`. A slice with zero L1 norm maps to the uniform
/// vector 1/n and passes no gradient.
Var l1_normalize(const Var& x, std::size_t axis);

/// Sum of all entries; scalar result.
Var sum(const Var& x);
Var mean(const Var& x);
/// Sum over one axis, which is removed from the shape.
Var sum_axis(const Var& x, std::size_t axis);

Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t length);
Var reshape(const Var& x, Shape shape);

/// Column-wise variants for rank-2 matrices (normalize over rows).
inline Var softmax_columns(const Var& m) { return softmax(m, 0); }
inline Var l1_normalize_columns(const Var& m) { return l1_normalize(m, 0); }

struct OpAttrs {
  std::size_t axis = 0;
  std::size_t start = 0;
  std::size_t length = 0;
  double alpha = 1.0;
  double beta = 0.0;
  Shape shape;
};

/// Generic dispatch over the primitive set.
Var primitive_forward(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs = {});

/// Reverse pass from a scalar loss. Gradients accumulate into every node that
/// requires one; read them back through Var::grad().
void backward(const Var& loss);

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per coordinate.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double eps);

}  // namespace mclstm::engine
