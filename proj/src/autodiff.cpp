#include "mmt/autodiff.hpp"

#include <cmath>
#include <limits>
#include <unordered_set>

#include <fmt/format.h>

#include "mmt/errors.hpp"

namespace mmt {

std::string to_string(Shape s) { return fmt::format("[{}x{}]", s.rows, s.cols); }

namespace {

thread_local bool g_grad_enabled = true;

template <typename Scalar>
using NodePtr = std::shared_ptr<Node<Scalar>>;

template <typename Scalar>
Tensor<Scalar> make_result(Matrix<Scalar> value, const char* op, std::vector<NodePtr<Scalar>> parents,
                           std::function<void(Node<Scalar>&)> backward_fn) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) any = any || p->requires_grad;
  }
  if (any) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Tensor<Scalar>(std::move(node));
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, to_string(a.shape()),
                                 to_string(b.shape())));
  }
}

template <typename Scalar>
void require_row_of(const Tensor<Scalar>& a, const Tensor<Scalar>& row, const char* op) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError(fmt::format("{}: expected a 1x{} row, got {} against {}", op, a.cols(),
                                 to_string(row.shape()), to_string(a.shape())));
  }
}

template <typename Scalar>
Scalar stable_sigmoid(Scalar x) {
  if (x >= 0) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
  }
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

}  // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename Scalar>
void Node<Scalar>::accumulate(const Matrix<Scalar>& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::constant(MatrixType value) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::parameter(MatrixType value) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->op = "parameter";
  return Tensor(std::move(node));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar v, bool requires_grad) {
  MatrixType m(1, 1);
  m(0, 0) = v;
  return requires_grad ? parameter(std::move(m)) : constant(std::move(m));
}

template <typename Scalar>
typename Tensor<Scalar>::MatrixType Tensor<Scalar>::grad() const {
  if (node_->grad.size() == 0) return MatrixType::Zero(rows(), cols());
  return node_->grad;
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) {
    throw ContractError(fmt::format("item(): tensor of shape {} is not a scalar", to_string(shape())));
  }
  return node_->value(0, 0);
}

// ---------------------------------------------------------------------------

template <typename Scalar>
void gemm_nn(const Matrix<Scalar>& a, const Matrix<Scalar>& b, Matrix<Scalar>& c) {
  for (Index i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (Index k = 0; k < a.cols(); ++k) {
      out.noalias() += a(i, k) * b.row(k);
    }
  }
}

template <typename Scalar>
void gemm_tn(const Matrix<Scalar>& a, const Matrix<Scalar>& b, Matrix<Scalar>& c) {
  for (Index i = 0; i < a.rows(); ++i) {
    const auto src = b.row(i);
    for (Index k = 0; k < a.cols(); ++k) {
      c.row(k).noalias() += a(i, k) * src;
    }
  }
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError(fmt::format("matmul: inner dimensions disagree, {} x {}", to_string(a.shape()),
                                 to_string(b.shape())));
  }
  Matrix<Scalar> out = Matrix<Scalar>::Zero(a.rows(), b.cols());
  gemm_nn(a.value(), b.value(), out);
  return make_result<Scalar>(std::move(out), "matmul", {a.node(), b.node()}, [](Node<Scalar>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      Matrix<Scalar> g = Matrix<Scalar>::Zero(pa.value.rows(), pa.value.cols());
      const Matrix<Scalar> bt = pb.value.transpose();
      gemm_nn(n.grad, bt, g);
      pa.accumulate(g);
    }
    if (pb.requires_grad) {
      Matrix<Scalar> g = Matrix<Scalar>::Zero(pb.value.rows(), pb.value.cols());
      gemm_tn(pa.value, n.grad, g);
      pb.accumulate(g);
    }
  });
}

template <typename Scalar>
Tensor<Scalar> matmul_nt(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError(fmt::format("matmul_nt: inner dimensions disagree, {} x {}^T",
                                 to_string(a.shape()), to_string(b.shape())));
  }
  Matrix<Scalar> out = Matrix<Scalar>::Zero(a.rows(), b.rows());
  const Matrix<Scalar> bt = b.value().transpose();
  gemm_nn(a.value(), bt, out);
  return make_result<Scalar>(std::move(out), "matmul_nt", {a.node(), b.node()},
                             [](Node<Scalar>& n) {
                               auto& pa = *n.parents[0];
                               auto& pb = *n.parents[1];
                               if (pa.requires_grad) {
                                 Matrix<Scalar> g =
                                     Matrix<Scalar>::Zero(pa.value.rows(), pa.value.cols());
                                 gemm_nn(n.grad, pb.value, g);
                                 pa.accumulate(g);
                               }
                               if (pb.requires_grad) {
                                 Matrix<Scalar> g =
                                     Matrix<Scalar>::Zero(pb.value.rows(), pb.value.cols());
                                 gemm_tn(n.grad, pa.value, g);
                                 pb.accumulate(g);
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "add");
  return make_result<Scalar>(a.value() + b.value(), "add", {a.node(), b.node()},
                             [](Node<Scalar>& n) {
                               for (auto& p : n.parents) {
                                 if (p->requires_grad) p->accumulate(n.grad);
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "sub");
  return make_result<Scalar>(a.value() - b.value(), "sub", {a.node(), b.node()},
                             [](Node<Scalar>& n) {
                               if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
                               if (n.parents[1]->requires_grad) n.parents[1]->accumulate_expr(-n.grad);
                             });
}

template <typename Scalar>
Tensor<Scalar> cwise_product(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "cwise_product");
  return make_result<Scalar>(a.value().cwiseProduct(b.value()), "mul", {a.node(), b.node()},
                             [](Node<Scalar>& n) {
                               auto& pa = *n.parents[0];
                               auto& pb = *n.parents[1];
                               if (pa.requires_grad) pa.accumulate_expr(n.grad.cwiseProduct(pb.value));
                               if (pb.requires_grad) pb.accumulate_expr(n.grad.cwiseProduct(pa.value));
                             });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  return make_result<Scalar>(a.value() * s, "scale", {a.node()}, [s](Node<Scalar>& n) {
    n.parents[0]->accumulate_expr(n.grad * s);
  });
}

template <typename Scalar>
Tensor<Scalar> add_rowwise(const Tensor<Scalar>& a, const Tensor<Scalar>& row) {
  require_row_of(a, row, "add_rowwise");
  Matrix<Scalar> out = a.value();
  out.rowwise() += row.value().row(0);
  return make_result<Scalar>(std::move(out), "add_rowwise", {a.node(), row.node()},
                             [](Node<Scalar>& n) {
                               auto& pa = *n.parents[0];
                               auto& pr = *n.parents[1];
                               if (pa.requires_grad) pa.accumulate(n.grad);
                               if (pr.requires_grad) {
                                 Matrix<Scalar> g = Matrix<Scalar>::Zero(1, n.grad.cols());
                                 for (Index i = 0; i < n.grad.rows(); ++i) g.row(0) += n.grad.row(i);
                                 pr.accumulate(g);
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> mul_rowwise(const Tensor<Scalar>& a, const Tensor<Scalar>& row) {
  require_row_of(a, row, "mul_rowwise");
  Matrix<Scalar> out = a.value();
  for (Index i = 0; i < out.rows(); ++i) out.row(i).array() *= row.value().row(0).array();
  return make_result<Scalar>(std::move(out), "mul_rowwise", {a.node(), row.node()},
                             [](Node<Scalar>& n) {
                               auto& pa = *n.parents[0];
                               auto& pr = *n.parents[1];
                               if (pa.requires_grad) {
                                 Matrix<Scalar> g = n.grad;
                                 for (Index i = 0; i < g.rows(); ++i) {
                                   g.row(i).array() *= pr.value.row(0).array();
                                 }
                                 pa.accumulate(g);
                               }
                               if (pr.requires_grad) {
                                 Matrix<Scalar> g = Matrix<Scalar>::Zero(1, n.grad.cols());
                                 for (Index i = 0; i < n.grad.rows(); ++i) {
                                   g.row(0).array() += n.grad.row(i).array() * pa.value.row(i).array();
                                 }
                                 pr.accumulate(g);
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> add_constant(const Tensor<Scalar>& a, const Matrix<Scalar>& c) {
  if (c.rows() != a.rows() || c.cols() != a.cols()) {
    throw ShapeError(fmt::format("add_constant: shape mismatch {} vs {}", to_string(a.shape()),
                                 to_string(Shape{c.rows(), c.cols()})));
  }
  return make_result<Scalar>(a.value() + c, "add_constant", {a.node()},
                             [](Node<Scalar>& n) { n.parents[0]->accumulate(n.grad); });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar x) { return stable_sigmoid(x); });
  return make_result<Scalar>(std::move(out), "sigmoid", {a.node()}, [](Node<Scalar>& n) {
    const auto& y = n.value.array();
    n.parents[0]->accumulate_expr((n.grad.array() * y * (Scalar(1) - y)).matrix());
  });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().cwiseMax(Scalar(0));
  return make_result<Scalar>(std::move(out), "relu", {a.node()}, [](Node<Scalar>& n) {
    const auto& x = n.parents[0]->value;
    n.parents[0]->accumulate_expr(
        (x.array() > Scalar(0)).select(n.grad.array(), Scalar(0)).matrix());
  });
}

template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& a) {
  const Matrix<Scalar>& x = a.value();
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    for (Index j = 0; j < x.cols(); ++j) out(i, j) = std::exp(x(i, j) - m);
    const Scalar s = ordered_sum(out.row(i).data(), x.cols());
    out.row(i) /= s;
  }
  return make_result<Scalar>(std::move(out), "softmax_rows", {a.node()}, [](Node<Scalar>& n) {
    const Matrix<Scalar>& y = n.value;
    Matrix<Scalar> g(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      Scalar dot = 0;
      for (Index j = 0; j < y.cols(); ++j) dot += n.grad(i, j) * y(i, j);
      for (Index j = 0; j < y.cols(); ++j) g(i, j) = y(i, j) * (n.grad(i, j) - dot);
    }
    n.parents[0]->accumulate(g);
  });
}

template <typename Scalar>
Tensor<Scalar> log_softmax_rows(const Tensor<Scalar>& a) {
  const Matrix<Scalar>& x = a.value();
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    Scalar s = 0;
    for (Index j = 0; j < x.cols(); ++j) s += std::exp(x(i, j) - m);
    const Scalar lse = m + std::log(s);
    for (Index j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) - lse;
  }
  return make_result<Scalar>(std::move(out), "log_softmax_rows", {a.node()}, [](Node<Scalar>& n) {
    const Matrix<Scalar>& y = n.value;
    Matrix<Scalar> g(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      const Scalar total = ordered_sum(n.grad.row(i).data(), y.cols());
      for (Index j = 0; j < y.cols(); ++j) g(i, j) = n.grad(i, j) - std::exp(y(i, j)) * total;
    }
    n.parents[0]->accumulate(g);
  });
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& a, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& bias, Scalar eps) {
  if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
  require_row_of(a, gain, "layer_norm(gain)");
  require_row_of(a, bias, "layer_norm(bias)");
  const Matrix<Scalar>& x = a.value();
  const Index rows = x.rows();
  const Index d = x.cols();
  Matrix<Scalar> xhat(rows, d);
  RowVector<Scalar> inv_std(rows);
  for (Index i = 0; i < rows; ++i) {
    const Scalar mean = ordered_sum(x.row(i).data(), d) / Scalar(d);
    Scalar var = 0;
    for (Index j = 0; j < d; ++j) {
      const Scalar c = x(i, j) - mean;
      xhat(i, j) = c;
      var += c * c;
    }
    var /= Scalar(d);
    inv_std(i) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(i) *= inv_std(i);
  }
  Matrix<Scalar> out(rows, d);
  for (Index i = 0; i < rows; ++i) {
    out.row(i) = xhat.row(i).cwiseProduct(gain.value().row(0)) + bias.value().row(0);
  }
  return make_result<Scalar>(
      std::move(out), "layer_norm", {a.node(), gain.node(), bias.node()},
      [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<Scalar>& n) {
        auto& px = *n.parents[0];
        auto& pg = *n.parents[1];
        auto& pb = *n.parents[2];
        const Index rows = n.grad.rows();
        const Index d = n.grad.cols();
        if (px.requires_grad) {
          Matrix<Scalar> g(rows, d);
          for (Index i = 0; i < rows; ++i) {
            Scalar mean_dxhat = 0;
            Scalar mean_dxhat_xhat = 0;
            for (Index j = 0; j < d; ++j) {
              const Scalar dxh = n.grad(i, j) * pg.value(0, j);
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat(i, j);
            }
            mean_dxhat /= Scalar(d);
            mean_dxhat_xhat /= Scalar(d);
            for (Index j = 0; j < d; ++j) {
              const Scalar dxh = n.grad(i, j) * pg.value(0, j);
              g(i, j) = inv_std(i) * (dxh - mean_dxhat - xhat(i, j) * mean_dxhat_xhat);
            }
          }
          px.accumulate(g);
        }
        if (pg.requires_grad) {
          Matrix<Scalar> g = Matrix<Scalar>::Zero(1, d);
          for (Index i = 0; i < rows; ++i) g.row(0) += n.grad.row(i).cwiseProduct(xhat.row(i));
          pg.accumulate(g);
        }
        if (pb.requires_grad) {
          Matrix<Scalar> g = Matrix<Scalar>::Zero(1, d);
          for (Index i = 0; i < rows; ++i) g.row(0) += n.grad.row(i);
          pb.accumulate(g);
        }
      });
}

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& a, std::span<const Index> rows) {
  const Index n_rows = a.rows();
  Matrix<Scalar> out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t] < 0 || rows[t] >= n_rows) {
      throw IndexError(fmt::format("id {} out of range for table with {} rows", rows[t], n_rows));
    }
    out.row(static_cast<Index>(t)) = a.value().row(rows[t]);
  }
  std::vector<Index> ids(rows.begin(), rows.end());
  return make_result<Scalar>(std::move(out), "gather_rows", {a.node()},
                             [ids = std::move(ids)](Node<Scalar>& n) {
                               auto& pa = *n.parents[0];
                               if (pa.grad.size() == 0) {
                                 pa.grad = Matrix<Scalar>::Zero(pa.value.rows(), pa.value.cols());
                               }
                               for (std::size_t t = 0; t < ids.size(); ++t) {
                                 pa.grad.row(ids[t]) += n.grad.row(static_cast<Index>(t));
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, std::span<const int> ids) {
  std::vector<Index> rows(ids.begin(), ids.end());
  return gather_rows(table, std::span<const Index>(rows));
}

template <typename Scalar>
Tensor<Scalar> rowwise_max_pool(const Tensor<Scalar>& a) {
  if (!a.defined() || a.rows() == 0) throw ContractError("rowwise_max_pool: empty pool (K = 0)");
  const Matrix<Scalar>& x = a.value();
  Matrix<Scalar> out(1, x.cols());
  std::vector<Index> argmax(static_cast<std::size_t>(x.cols()), 0);
  for (Index j = 0; j < x.cols(); ++j) {
    Index best = 0;
    for (Index i = 1; i < x.rows(); ++i) {
      if (x(i, j) > x(best, j)) best = i;
    }
    argmax[static_cast<std::size_t>(j)] = best;
    out(0, j) = x(best, j);
  }
  return make_result<Scalar>(std::move(out), "rowwise_max_pool", {a.node()},
                             [argmax = std::move(argmax)](Node<Scalar>& n) {
                               auto& pa = *n.parents[0];
                               Matrix<Scalar> g =
                                   Matrix<Scalar>::Zero(pa.value.rows(), pa.value.cols());
                               for (Index j = 0; j < g.cols(); ++j) {
                                 g(argmax[static_cast<std::size_t>(j)], j) = n.grad(0, j);
                               }
                               pa.accumulate(g);
                             });
}

template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& a, double rate, bool training, CounterStream& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError(fmt::format("dropout rate {} outside [0, 1)", rate));
  }
  if (!training || rate == 0.0) return a;
  const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
  Matrix<Scalar> mask(a.rows(), a.cols());
  for (Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.next_uniform() < rate ? Scalar(0) : keep_scale;
  }
  Matrix<Scalar> out = a.value().cwiseProduct(mask);
  return make_result<Scalar>(std::move(out), "dropout", {a.node()},
                             [mask = std::move(mask)](Node<Scalar>& n) {
                               n.parents[0]->accumulate_expr(n.grad.cwiseProduct(mask));
                             });
}

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& a, Index start, Index count) {
  if (start < 0 || count <= 0 || start + count > a.cols()) {
    throw ShapeError(fmt::format("slice_cols: [{}, {}) outside {}", start, start + count,
                                 to_string(a.shape())));
  }
  Matrix<Scalar> out = a.value().middleCols(start, count);
  return make_result<Scalar>(std::move(out), "slice_cols", {a.node()},
                             [start, count](Node<Scalar>& n) {
                               auto& pa = *n.parents[0];
                               if (pa.grad.size() == 0) {
                                 pa.grad = Matrix<Scalar>::Zero(pa.value.rows(), pa.value.cols());
                               }
                               pa.grad.middleCols(start, count) += n.grad;
                             });
}

template <typename Scalar>
Tensor<Scalar> concat_cols(std::span<const Tensor<Scalar>> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError(fmt::format("concat_cols: row mismatch {} vs {}",
                                   to_string(parts.front().shape()), to_string(p.shape())));
    }
    cols += p.cols();
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<NodePtr<Scalar>> parents;
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
    parents.push_back(p.node());
  }
  return make_result<Scalar>(std::move(out), "concat_cols", std::move(parents), [](Node<Scalar>& n) {
    Index off = 0;
    for (auto& p : n.parents) {
      const Index c = p->value.cols();
      if (p->requires_grad) p->accumulate(n.grad.middleCols(off, c));
      off += c;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> concat_rows(std::span<const Tensor<Scalar>> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw ShapeError(fmt::format("concat_rows: column mismatch {} vs {}",
                                   to_string(parts.front().shape()), to_string(p.shape())));
    }
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<NodePtr<Scalar>> parents;
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
    parents.push_back(p.node());
  }
  return make_result<Scalar>(std::move(out), "concat_rows", std::move(parents), [](Node<Scalar>& n) {
    Index off = 0;
    for (auto& p : n.parents) {
      const Index r = p->value.rows();
      if (p->requires_grad) p->accumulate(n.grad.middleRows(off, r));
      off += r;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> mean_rows(const Tensor<Scalar>& a) {
  if (a.rows() == 0) throw ContractError("mean_rows: empty input");
  const Index rows = a.rows();
  Matrix<Scalar> out = Matrix<Scalar>::Zero(1, a.cols());
  for (Index i = 0; i < rows; ++i) out += a.value().row(i);
  out /= static_cast<Scalar>(rows);
  return make_result<Scalar>(std::move(out), "mean_rows", {a.node()}, [rows](Node<Scalar>& n) {
    auto& pa = *n.parents[0];
    const Matrix<Scalar> g = (n.grad / static_cast<Scalar>(rows)).replicate(rows, 1);
    pa.accumulate(g);
  });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = ordered_sum(a.value().data(), a.size());
  return make_result<Scalar>(std::move(out), "sum", {a.node()}, [](Node<Scalar>& n) {
    auto& pa = *n.parents[0];
    pa.accumulate(Matrix<Scalar>::Constant(pa.value.rows(), pa.value.cols(), n.grad(0, 0)));
  });
}

template <typename Scalar>
Tensor<Scalar> weighted_sum(const Tensor<Scalar>& a, const Matrix<Scalar>& w) {
  if (w.rows() != a.rows() || w.cols() != a.cols()) {
    throw ShapeError(fmt::format("weighted_sum: shape mismatch {} vs {}", to_string(a.shape()),
                                 to_string(Shape{w.rows(), w.cols()})));
  }
  Scalar s = 0;
  for (Index i = 0; i < a.size(); ++i) s += a.value().data()[i] * w.data()[i];
  Matrix<Scalar> out(1, 1);
  out(0, 0) = s;
  return make_result<Scalar>(std::move(out), "weighted_sum", {a.node()},
                             [w](Node<Scalar>& n) { n.parents[0]->accumulate_expr(w * n.grad(0, 0)); });
}

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError(fmt::format("backward: loss must be a 1x1 scalar, got {}",
                                    loss.defined() ? to_string(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Matrix<Scalar>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
}

#define MMT_INSTANTIATE_AUTODIFF(S)                                                              \
  template struct Node<S>;                                                                       \
  template class Tensor<S>;                                                                      \
  template void gemm_nn<S>(const Matrix<S>&, const Matrix<S>&, Matrix<S>&);                      \
  template void gemm_tn<S>(const Matrix<S>&, const Matrix<S>&, Matrix<S>&);                      \
  template Tensor<S> matmul<S>(const Tensor<S>&, const Tensor<S>&);                              \
  template Tensor<S> matmul_nt<S>(const Tensor<S>&, const Tensor<S>&);                           \
  template Tensor<S> operator+ <S>(const Tensor<S>&, const Tensor<S>&);                          \
  template Tensor<S> operator- <S>(const Tensor<S>&, const Tensor<S>&);                          \
  template Tensor<S> cwise_product<S>(const Tensor<S>&, const Tensor<S>&);                       \
  template Tensor<S> scale<S>(const Tensor<S>&, S);                                              \
  template Tensor<S> add_rowwise<S>(const Tensor<S>&, const Tensor<S>&);                         \
  template Tensor<S> mul_rowwise<S>(const Tensor<S>&, const Tensor<S>&);                         \
  template Tensor<S> add_constant<S>(const Tensor<S>&, const Matrix<S>&);                        \
  template Tensor<S> sigmoid<S>(const Tensor<S>&);                                               \
  template Tensor<S> relu<S>(const Tensor<S>&);                                                  \
  template Tensor<S> softmax_rows<S>(const Tensor<S>&);                                          \
  template Tensor<S> log_softmax_rows<S>(const Tensor<S>&);                                      \
  template Tensor<S> layer_norm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);     \
  template Tensor<S> embedding_lookup<S>(const Tensor<S>&, std::span<const int>);                \
  template Tensor<S> gather_rows<S>(const Tensor<S>&, std::span<const Index>);                   \
  template Tensor<S> rowwise_max_pool<S>(const Tensor<S>&);                                      \
  template Tensor<S> dropout<S>(const Tensor<S>&, double, bool, CounterStream&);                 \
  template Tensor<S> slice_cols<S>(const Tensor<S>&, Index, Index);                              \
  template Tensor<S> concat_cols<S>(std::span<const Tensor<S>>);                                 \
  template Tensor<S> concat_rows<S>(std::span<const Tensor<S>>);                                 \
  template Tensor<S> mean_rows<S>(const Tensor<S>&);                                             \
  template Tensor<S> sum<S>(const Tensor<S>&);                                                   \
  template Tensor<S> weighted_sum<S>(const Tensor<S>&, const Matrix<S>&);                        \
  template void backward<S>(const Tensor<S>&);

MMT_INSTANTIATE_AUTODIFF(float)
MMT_INSTANTIATE_AUTODIFF(double)

}  // namespace mmt
