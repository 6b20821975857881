#pragma once

// Reverse-mode automatic differentiation over dense 2-D matrices.
//
// A Tape records every forward operation in creation order, which is already a
// topological order, so backward() is a single reverse sweep that visits each
// node once. Tensors are lightweight handles (tape pointer + node index); the
// tape owns all values and gradients and must outlive its tensors.

#include "wbt/error.hpp"
#include "wbt/random.hpp"
#include "wbt/types.hpp"

#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace wbt::ad {

class Tape;

class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  bool requires_grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Matrix value, bool requires_grad = false) {
    check_finite(value, "leaf");
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, requires_grad, true, false});
    return Tensor(this, nodes_.size() - 1);
  }

  /// Records an op result. The backward closure is dropped when no parent
  /// requires a gradient.
  Tensor record(Matrix value, std::initializer_list<Tensor> parents, BackwardFn fn, const char* op) {
    check_finite(value, op);
    bool needs = false;
    for (const Tensor& p : parents) {
      check_owner(p, op);
      needs = needs || node(p).requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(fn) : nullptr, needs, false, false});
    return Tensor(this, nodes_.size() - 1);
  }

  /// Populates gradients of `loss` with respect to every requires_grad leaf.
  /// Leaf gradients accumulate across calls; intermediate ones are recomputed.
  void backward(Tensor loss) {
    check_owner(loss, "backward");
    const Node& l = node(loss);
    if (l.value.rows() != 1 || l.value.cols() != 1)
      throw std::invalid_argument("backward: loss must be 1x1, got " + shape_str(l.value));
    for (Node& n : nodes_)
      if (!n.leaf) {
        n.grad.resize(0, 0);
        n.has_grad = false;
      }
    if (!l.requires_grad) return;
    accumulate(loss.id(), Matrix::Ones(1, 1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.leaf || !n.has_grad || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) {
      n.grad.resize(0, 0);
      n.has_grad = false;
    }
  }

  /// Adds `g` into the gradient of node `id` when that node wants one.
  template <class Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }

  const Matrix& grad(std::size_t id) const {
    const Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  static std::string shape_str(const Matrix& m) {
    return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
  }

 private:
  struct Node {
    Matrix value;
    mutable Matrix grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
    mutable bool has_grad = false;
  };

  const Node& node(const Tensor& t) const { return nodes_[t.id()]; }

  void check_owner(const Tensor& t, const char* op) const {
    if (t.tape() != this) throw std::invalid_argument(std::string(op) + ": tensor belongs to a different tape");
  }

  static void check_finite(const Matrix& m, const char* op) {
    if (!m.allFinite()) throw NumericError(std::string(op) + ": produced a non-finite value");
  }

  std::deque<Node> nodes_;
};

inline const Matrix& Tensor::value() const { return tape_->value(id_); }
inline const Matrix& Tensor::grad() const { return tape_->grad(id_); }
inline bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + Tape::shape_str(a.value()) + " vs " +
                                Tape::shape_str(b.value()));
}

}  // namespace detail

inline Tensor matmul(Tensor a, Tensor b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: shape mismatch " + Tape::shape_str(a.value()) + " vs " +
                                Tape::shape_str(b.value()));
  Matrix out = a.value() * b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b},
                          [ia, ib](Tape& t, const Matrix& g) {
                            if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
                            if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
                          },
                          "matmul");
}

inline Tensor add(Tensor a, Tensor b) {
  detail::require_same_shape(a, b, "add");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), {a, b},
                          [ia, ib](Tape& t, const Matrix& g) {
                            t.accumulate(ia, g);
                            t.accumulate(ib, g);
                          },
                          "add");
}

/// Adds a 1 x c row vector to every row of `a`.
inline Tensor add_row(Tensor a, Tensor row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw std::invalid_argument("add_row: shape mismatch " + Tape::shape_str(a.value()) + " vs " +
                                Tape::shape_str(row.value()));
  Matrix out = a.value().rowwise() + row.value().row(0);
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape()->record(std::move(out), {a, row},
                          [ia, ir](Tape& t, const Matrix& g) {
                            t.accumulate(ia, g);
                            if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
                          },
                          "add_row");
}

inline Tensor scale(Tensor a, double c) {
  const std::size_t ia = a.id();
  return a.tape()->record(c * a.value(), {a}, [ia, c](Tape& t, const Matrix& g) { t.accumulate(ia, c * g); },
                          "scale");
}

inline Tensor relu(Tensor a) {
  const std::size_t ia = a.id();
  return a.tape()->record(a.value().cwiseMax(0.0), {a},
                          [ia](Tape& t, const Matrix& g) {
                            const Matrix& x = t.value(ia);
                            t.accumulate(ia, (x.array() > 0.0).select(g, 0.0).matrix());
                          },
                          "relu");
}

/// PReLU with a single learnable 1x1 slope shared by every element.
inline Tensor prelu(Tensor a, Tensor slope) {
  if (slope.rows() != 1 || slope.cols() != 1)
    throw std::invalid_argument("prelu: slope must be 1x1, got " + Tape::shape_str(slope.value()));
  const double s = slope.value()(0, 0);
  Matrix out = (a.value().array() > 0.0).select(a.value(), s * a.value());
  const std::size_t ia = a.id(), is = slope.id();
  return a.tape()->record(std::move(out), {a, slope},
                          [ia, is](Tape& t, const Matrix& g) {
                            const Matrix& x = t.value(ia);
                            const double s = t.value(is)(0, 0);
                            const auto positive = x.array() > 0.0;
                            if (t.requires_grad(ia)) t.accumulate(ia, positive.select(g, s * g).matrix());
                            if (t.requires_grad(is)) {
                              const double ds = positive.select(0.0, g.array() * x.array()).sum();
                              t.accumulate(is, Matrix::Constant(1, 1, ds));
                            }
                          },
                          "prelu");
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(Tensor a) {
  Matrix out = a.value().unaryExpr([](double x) { return sigmoid_scalar(x); });
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a},
                          [ia](Tape& t, const Matrix& g) {
                            const Matrix y = t.value(ia).unaryExpr([](double x) { return sigmoid_scalar(x); });
                            t.accumulate(ia, (g.array() * y.array() * (1.0 - y.array())).matrix());
                          },
                          "sigmoid");
}

/// Inverted dropout: each entry is zeroed with probability p and survivors are
/// scaled by 1 / (1 - p). p == 0 returns `a` unchanged.
inline Tensor dropout(Tensor a, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (p == 0.0) return a;
  Matrix mask(a.rows(), a.cols());
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < p ? 0.0 : keep_scale;
  Matrix out = a.value().cwiseProduct(mask);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a},
                          [ia, mask = std::move(mask)](Tape& t, const Matrix& g) {
                            t.accumulate(ia, g.cwiseProduct(mask));
                          },
                          "dropout");
}

/// Per-row cosine similarity of two equally shaped matrices, as an n x 1
/// column. A row pair where either side has zero norm has similarity 0 and
/// contributes no gradient.
inline Tensor row_cosine(Tensor a, Tensor b) {
  detail::require_same_shape(a, b, "row_cosine");
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  const Eigen::Index n = x.rows();
  Matrix out(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double na = x.row(i).norm();
    const double nb = y.row(i).norm();
    out(i, 0) = (na > 0.0 && nb > 0.0) ? x.row(i).dot(y.row(i)) / (na * nb) : 0.0;
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b},
                          [ia, ib](Tape& t, const Matrix& g) {
                            const Matrix& x = t.value(ia);
                            const Matrix& y = t.value(ib);
                            Matrix gx = Matrix::Zero(x.rows(), x.cols());
                            Matrix gy = Matrix::Zero(y.rows(), y.cols());
                            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                              const double na = x.row(i).norm();
                              const double nb = y.row(i).norm();
                              if (na == 0.0 || nb == 0.0) continue;
                              const double c = x.row(i).dot(y.row(i)) / (na * nb);
                              const double gi = g(i, 0);
                              gx.row(i) = gi * (y.row(i) / (na * nb) - c * x.row(i) / (na * na));
                              gy.row(i) = gi * (x.row(i) / (na * nb) - c * y.row(i) / (nb * nb));
                            }
                            t.accumulate(ia, gx);
                            t.accumulate(ib, gy);
                          },
                          "row_cosine");
}

/// adj * h for a constant sparse matrix.
inline Tensor spmm(std::shared_ptr<const SparseMatrix> adj, Tensor h) {
  if (adj->cols() != h.rows())
    throw std::invalid_argument("spmm: shape mismatch (" + std::to_string(adj->rows()) + "x" +
                                std::to_string(adj->cols()) + ") vs " + Tape::shape_str(h.value()));
  Matrix out = (*adj) * h.value();
  const std::size_t ih = h.id();
  return h.tape()->record(std::move(out), {h},
                          [ih, adj = std::move(adj)](Tape& t, const Matrix& g) {
                            t.accumulate(ih, Matrix(adj->transpose() * g));
                          },
                          "spmm");
}

/// Rows of `a` at `index` (repeats allowed); gradients scatter-add back.
inline Tensor gather_rows(Tensor a, std::vector<Index> index) {
  const Matrix& x = a.value();
  Matrix out(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= static_cast<Index>(x.rows()))
      throw std::out_of_range("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                              Tape::shape_str(x));
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(index[i]));
  }
  const std::size_t ia = a.id();
  const Eigen::Index rows = x.rows(), cols = x.cols();
  return a.tape()->record(std::move(out), {a},
                          [ia, rows, cols, index = std::move(index)](Tape& t, const Matrix& g) {
                            Matrix gx = Matrix::Zero(rows, cols);
                            for (std::size_t i = 0; i < index.size(); ++i)
                              gx.row(static_cast<Eigen::Index>(index[i])) += g.row(static_cast<Eigen::Index>(i));
                            t.accumulate(ia, gx);
                          },
                          "gather_rows");
}

inline Tensor slice_rows(Tensor a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows())
    throw std::out_of_range("slice_rows: range out of bounds for " + Tape::shape_str(a.value()));
  Matrix out = a.value().middleRows(start, count);
  const std::size_t ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(std::move(out), {a},
                          [ia, rows, cols, start, count](Tape& t, const Matrix& g) {
                            Matrix gx = Matrix::Zero(rows, cols);
                            gx.middleRows(start, count) = g;
                            t.accumulate(ia, gx);
                          },
                          "slice_rows");
}

inline Tensor concat_rows(Tensor a, Tensor b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("concat_rows: shape mismatch " + Tape::shape_str(a.value()) + " vs " +
                                Tape::shape_str(b.value()));
  Matrix out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  const std::size_t ia = a.id(), ib = b.id();
  const Eigen::Index ra = a.rows(), rb = b.rows();
  return a.tape()->record(std::move(out), {a, b},
                          [ia, ib, ra, rb](Tape& t, const Matrix& g) {
                            if (t.requires_grad(ia)) t.accumulate(ia, g.topRows(ra));
                            if (t.requires_grad(ib)) t.accumulate(ib, g.bottomRows(rb));
                          },
                          "concat_rows");
}

inline Tensor concat_cols(Tensor a, Tensor b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("concat_cols: shape mismatch " + Tape::shape_str(a.value()) + " vs " +
                                Tape::shape_str(b.value()));
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a.value();
  out.rightCols(b.cols()) = b.value();
  const std::size_t ia = a.id(), ib = b.id();
  const Eigen::Index ca = a.cols(), cb = b.cols();
  return a.tape()->record(std::move(out), {a, b},
                          [ia, ib, ca, cb](Tape& t, const Matrix& g) {
                            if (t.requires_grad(ia)) t.accumulate(ia, g.leftCols(ca));
                            if (t.requires_grad(ib)) t.accumulate(ib, g.rightCols(cb));
                          },
                          "concat_cols");
}

/// Copy of `a` with the rows at `index` replaced by the 1 x c `row`.
inline Tensor substitute_rows(Tensor a, Tensor row, std::vector<Index> index) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw std::invalid_argument("substitute_rows: shape mismatch " + Tape::shape_str(a.value()) + " vs " +
                                Tape::shape_str(row.value()));
  Matrix out = a.value();
  for (Index i : index) {
    if (i >= static_cast<Index>(out.rows())) throw std::out_of_range("substitute_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = row.value().row(0);
  }
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape()->record(std::move(out), {a, row},
                          [ia, ir, index = std::move(index)](Tape& t, const Matrix& g) {
                            Matrix ga = g;
                            Matrix gr = Matrix::Zero(1, g.cols());
                            std::vector<bool> done(static_cast<std::size_t>(g.rows()), false);
                            for (Index i : index) {
                              if (done[i]) continue;
                              done[i] = true;
                              gr += g.row(static_cast<Eigen::Index>(i));
                              ga.row(static_cast<Eigen::Index>(i)).setZero();
                            }
                            if (t.requires_grad(ia)) t.accumulate(ia, ga);
                            if (t.requires_grad(ir)) t.accumulate(ir, gr);
                          },
                          "substitute_rows");
}

inline Tensor sum(Tensor a) {
  const std::size_t ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum()), {a},
                          [ia, rows, cols](Tape& t, const Matrix& g) {
                            t.accumulate(ia, Matrix::Constant(rows, cols, g(0, 0)));
                          },
                          "sum");
}

/// (sum_i w_i x_i) / (sum_i w_i) for an n x 1 column `x`.
inline Tensor weighted_mean(Tensor x, std::vector<double> weights) {
  if (x.cols() != 1 || static_cast<std::size_t>(x.rows()) != weights.size())
    throw std::invalid_argument("weighted_mean: expected an n x 1 column matching " +
                                std::to_string(weights.size()) + " weights, got " + Tape::shape_str(x.value()));
  double wsum = 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    wsum += weights[i];
    acc += weights[i] * x.value()(static_cast<Eigen::Index>(i), 0);
  }
  if (!(wsum > 0.0)) throw std::invalid_argument("weighted_mean: weight sum must be positive");
  const std::size_t ix = x.id();
  return x.tape()->record(Matrix::Constant(1, 1, acc / wsum), {x},
                          [ix, wsum, weights = std::move(weights)](Tape& t, const Matrix& g) {
                            Matrix gx(static_cast<Eigen::Index>(weights.size()), 1);
                            for (std::size_t i = 0; i < weights.size(); ++i)
                              gx(static_cast<Eigen::Index>(i), 0) = g(0, 0) * weights[i] / wsum;
                            t.accumulate(ix, gx);
                          },
                          "weighted_mean");
}

/// -(1/M) sum_j w_j [y_j log s(z_j) + (1 - y_j) log(1 - s(z_j))] over an
/// M x 1 column of logits z, computed in the overflow-safe softplus form.
inline Tensor bce_with_logits(Tensor logits, std::vector<double> labels, std::vector<double> weights) {
  const auto m = static_cast<std::size_t>(logits.rows());
  if (logits.cols() != 1 || labels.size() != m || weights.size() != m || m == 0)
    throw std::invalid_argument("bce_with_logits: expected matching non-empty M x 1 logits, labels and weights");
  double acc = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const double z = logits.value()(static_cast<Eigen::Index>(j), 0);
    const double y = labels[j];
    acc += weights[j] * (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))));
  }
  const std::size_t iz = logits.id();
  return logits.tape()->record(
      Matrix::Constant(1, 1, acc / static_cast<double>(m)), {logits},
      [iz, labels = std::move(labels), weights = std::move(weights)](Tape& t, const Matrix& g) {
        const Matrix& z = t.value(iz);
        const auto m = static_cast<double>(labels.size());
        Matrix gz(z.rows(), 1);
        for (Eigen::Index j = 0; j < z.rows(); ++j) {
          const auto k = static_cast<std::size_t>(j);
          gz(j, 0) = g(0, 0) * weights[k] * (sigmoid_scalar(z(j, 0)) - labels[k]) / m;
        }
        t.accumulate(iz, gz);
      },
      "bce_with_logits");
}

}  // namespace wbt::ad
