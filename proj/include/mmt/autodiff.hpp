#pragma once

// Define-by-run reverse-mode differentiation over dense row-major matrices.
//
// Every tensor is a matrix; vectors are 1 x n rows. Each op allocates a node
// holding its forward value and a closure that pushes the node's gradient
// into its parents. Nodes are only linked when some input requires a
// gradient, so evaluation under NoGradGuard builds no graph at all.
//
// Matrix products and row reductions use fixed summation order (ascending
// inner index) and transcendental functions are evaluated per scalar. A row's
// result therefore depends only on that row's inputs, never on how many other
// rows share the matrix. Causality and padding invariance rely on this.

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mmt/random.hpp"

namespace mmt {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

struct Shape {
  Index rows = 0;
  Index cols = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(Shape s);

template <typename Scalar>
struct Node {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix<Scalar>& g);
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0) {
      grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
    }
    grad += g;
  }
};

/// Handle to a node in the computation graph. Copies share the node.
template <typename Scalar>
class Tensor {
 public:
  using MatrixType = Matrix<Scalar>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

  static Tensor constant(MatrixType value);
  static Tensor parameter(MatrixType value);
  static Tensor scalar(Scalar v, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const MatrixType& value() const { return node_->value; }
  /// Direct access for optimizers and checkpoint loading. Never call on a
  /// node that is part of a live graph.
  MatrixType& mutable_value() { return node_->value; }

  bool has_grad() const { return node_->grad.size() != 0; }
  /// Gradient, or zeros when none has been accumulated.
  MatrixType grad() const;
  void zero_grad() { node_->grad.resize(0, 0); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  Shape shape() const { return {rows(), cols()}; }
  Scalar item() const;

  const std::shared_ptr<Node<Scalar>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

/// Disables graph construction on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

// ---------------------------------------------------------------------------
// Dense kernels with fixed summation order.

template <typename Scalar>
void gemm_nn(const Matrix<Scalar>& a, const Matrix<Scalar>& b, Matrix<Scalar>& c);  // c += a b
template <typename Scalar>
void gemm_tn(const Matrix<Scalar>& a, const Matrix<Scalar>& b, Matrix<Scalar>& c);  // c += a^T b

// ---------------------------------------------------------------------------
// Ops.

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// a * b^T
template <typename Scalar>
Tensor<Scalar> matmul_nt(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> cwise_product(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s);

/// a[i, :] + row for every i. `row` is 1 x cols.
template <typename Scalar>
Tensor<Scalar> add_rowwise(const Tensor<Scalar>& a, const Tensor<Scalar>& row);
/// a[i, :] * row elementwise for every i.
template <typename Scalar>
Tensor<Scalar> mul_rowwise(const Tensor<Scalar>& a, const Tensor<Scalar>& row);
/// Adds a constant (non-differentiable) matrix, e.g. an attention mask.
template <typename Scalar>
Tensor<Scalar> add_constant(const Tensor<Scalar>& a, const Matrix<Scalar>& c);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> log_softmax_rows(const Tensor<Scalar>& a);

/// Normalizes every row to zero mean and unit variance, then applies
/// gain and bias (both 1 x cols).
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& a, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& bias, Scalar eps);

/// Gathers table rows; backward scatter-adds.
template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, std::span<const int> ids);
/// Gathers rows of an arbitrary tensor (same semantics as embedding_lookup).
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& a, std::span<const Index> rows);

/// Columnwise maximum over the rows of a K x d tensor. Ties route the
/// gradient to the lowest row index.
template <typename Scalar>
Tensor<Scalar> rowwise_max_pool(const Tensor<Scalar>& a);

/// Inverted dropout. In eval mode, or with rate 0, returns `a` itself.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& a, double rate, bool training, CounterStream& rng);

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& a, Index start, Index count);
template <typename Scalar>
Tensor<Scalar> concat_cols(std::span<const Tensor<Scalar>> parts);
template <typename Scalar>
Tensor<Scalar> concat_rows(std::span<const Tensor<Scalar>> parts);
/// 1 x cols average of the rows.
template <typename Scalar>
Tensor<Scalar> mean_rows(const Tensor<Scalar>& a);

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);
/// sum(a .* w) for a constant weight matrix w; returns a 1 x 1 tensor.
template <typename Scalar>
Tensor<Scalar> weighted_sum(const Tensor<Scalar>& a, const Matrix<Scalar>& w);

/// Reverse sweep from a 1 x 1 loss. Gradients accumulate into every
/// reachable tensor that requires them.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss);

// Row reductions in ascending index order.
template <typename Scalar>
Scalar ordered_sum(const Scalar* data, Index n) {
  Scalar s = 0;
  for (Index i = 0; i < n; ++i) s += data[i];
  return s;
}

}  // namespace mmt
