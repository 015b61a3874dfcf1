// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiation over dense Eigen matrices. A Tape records
// every operation of one forward pass; backward() replays it in reverse and
// pushes gradients into the ParameterStore tensors that seeded it.
#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "macd/parameters.hpp"
#include "macd/tensor.hpp"

namespace macd {

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Matrix<Scalar>& value() const { return tape->value(id); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  /// (tape, this node's output, gradient w.r.t. the output)
  using Backward = std::function<void(Tape&, const Mat&, const Mat&)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Mat value) { return push(std::move(value), false, nullptr); }
  Var<Scalar> zeros(Index rows, Index cols) { return constant(Mat::Zero(rows, cols)); }

  /// Leaf bound to a parameter; one node per parameter per tape.
  Var<Scalar> parameter(Parameter<Scalar>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return {this, it->second};
    Parameter<Scalar>* ptr = &p;
    auto v = push(p.value, true, [ptr](Tape&, const Mat&, const Mat& g) { ptr->grad += g; });
    param_nodes_[ptr] = v.id;
    return v;
  }

  Var<Scalar> push(Mat value, bool needs_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Mat(), needs_grad, std::move(backward)});
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  bool needs_grad(Var<Scalar> v) const { return needs_grad(v.id); }

  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Adds g into the block of the gradient starting at (row, col).
  template <typename Derived>
  void accumulate_block(int id, Index row, Index col, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad.block(row, col, g.rows(), g.cols()) += g;
  }

  /// Reverse sweep from a 1x1 root.
  void backward(Var<Scalar> root) {
    if (root.rows() != 1 || root.cols() != 1)
      throw std::invalid_argument("backward root must be 1x1");
    nodes_[static_cast<std::size_t>(root.id)].grad = Mat::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.needs_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.value, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<Scalar>*, int> param_nodes_;
};

namespace detail {
template <typename Scalar, typename... Vs>
bool any_grad(Var<Scalar> a, Vs... rest) {
  return (a.tape->needs_grad(a) || ... || rest.tape->needs_grad(rest));
}
template <typename Scalar>
void require_same_shape(Var<Scalar> a, Var<Scalar> b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}
}  // namespace detail

/// Rows of an embedding table. Index 0 of a padding table yields a zero row
/// that carries no gradient, so the padding row never moves.
template <typename Scalar>
Var<Scalar> gather_rows(Tape<Scalar>& t, Parameter<Scalar>& table, const IndexSequence& indices) {
  const Index n = static_cast<Index>(indices.size());
  Matrix<Scalar> out(n, table.value.cols());
  for (Index i = 0; i < n; ++i) {
    const int r = indices[static_cast<std::size_t>(i)];
    if (r < 0 || r >= table.value.rows())
      throw std::out_of_range("index " + std::to_string(r) + " outside table " + table.name);
    if (r == 0 && table.padding_row) {
      out.row(i).setZero();
    } else {
      out.row(i) = table.value.row(r);
    }
  }
  Parameter<Scalar>* p = &table;
  return t.push(std::move(out), true,
                [p, indices](Tape<Scalar>&, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
                  for (std::size_t i = 0; i < indices.size(); ++i) {
                    if (indices[i] == 0 && p->padding_row) continue;
                    p->grad.row(indices[i]) += g.row(static_cast<Index>(i));
                  }
                });
}

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: shape mismatch");
  const int ia = a.id, ib = b.id;
  Matrix<Scalar> out = a.value() * b.value();
  return a.tape->push(std::move(out), detail::any_grad(a, b),
                      [ia, ib](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
                        if (tp.needs_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
                        if (tp.needs_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
                      });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape(a, b, "add");
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value() + b.value(), detail::any_grad(a, b),
                      [ia, ib](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
                        tp.accumulate(ia, g);
                        tp.accumulate(ib, g);
                      });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape(a, b, "sub");
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value() - b.value(), detail::any_grad(a, b),
                      [ia, ib](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
                        tp.accumulate(ia, g);
                        tp.accumulate(ib, -g);
                      });
}

template <typename Scalar>
Var<Scalar> hadamard(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape(a, b, "hadamard");
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value().cwiseProduct(b.value()), detail::any_grad(a, b),
                      [ia, ib](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
                        if (tp.needs_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
                        if (tp.needs_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
                      });
}

/// a + b with the 1xn row b broadcast over every row of a.
template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> a, Var<Scalar> b) {
  if (b.rows() != 1 || b.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  const int ia = a.id, ib = b.id;
  Matrix<Scalar> out = a.value().rowwise() + b.value().row(0);
  return a.tape->push(std::move(out), detail::any_grad(a, b),
                      [ia, ib](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
                        tp.accumulate(ia, g);
                        if (tp.needs_grad(ib)) tp.accumulate(ib, g.colwise().sum());
                      });
}

/// s·a + c elementwise.
template <typename Scalar>
Var<Scalar> affine(Var<Scalar> a, Scalar s, Scalar c = Scalar(0)) {
  const int ia = a.id;
  Matrix<Scalar> out = (s * a.value().array() + c).matrix();
  return a.tape->push(std::move(out), detail::any_grad(a),
                      [ia, s](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
                        tp.accumulate(ia, s * g);
                      });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  const int ia = a.id;
  Matrix<Scalar> out = (Scalar(1) / (Scalar(1) + (-a.value().array()).exp())).matrix();
  return a.tape->push(std::move(out), detail::any_grad(a),
                      [ia](Tape<Scalar>& tp, const Matrix<Scalar>& y, const Matrix<Scalar>& g) {
                        tp.accumulate(ia, (g.array() * y.array() * (Scalar(1) - y.array())).matrix());
                      });
}

template <typename Scalar>
Var<Scalar> tanh(Var<Scalar> a) {
  const int ia = a.id;
  Matrix<Scalar> out = a.value().array().tanh().matrix();
  return a.tape->push(std::move(out), detail::any_grad(a),
                      [ia](Tape<Scalar>& tp, const Matrix<Scalar>& y, const Matrix<Scalar>& g) {
                        tp.accumulate(ia, (g.array() * (Scalar(1) - y.array().square())).matrix());
                      });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a) {
  const int ia = a.id;
  Matrix<Scalar> out = a.value().cwiseMax(Scalar(0));
  return a.tape->push(std::move(out), detail::any_grad(a),
                      [ia](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
                        tp.accumulate(ia, (tp.value(ia).array() > Scalar(0)).select(g.array(), Scalar(0)).matrix());
                      });
}

/// Zeroes every row whose mask entry is false.
template <typename Scalar>
Var<Scalar> mask_rows(Var<Scalar> a, const Mask& rows) {
  if (rows.size() != a.rows()) throw std::invalid_argument("mask_rows: mask length mismatch");
  const int ia = a.id;
  Matrix<Scalar> out = a.value();
  for (Index i = 0; i < out.rows(); ++i)
    if (!rows(i)) out.row(i).setZero();
  return a.tape->push(std::move(out), detail::any_grad(a),
                      [ia, rows](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
                        Matrix<Scalar> gm = g;
                        for (Index i = 0; i < gm.rows(); ++i)
                          if (!rows(i)) gm.row(i).setZero();
                        tp.accumulate(ia, gm);
                      });
}

/// Mean over the rows whose mask entry is true; the zero row when none are.
template <typename Scalar>
Var<Scalar> masked_mean_rows(Var<Scalar> a, const Mask& rows) {
  if (rows.size() != a.rows()) throw std::invalid_argument("masked_mean_rows: mask length mismatch");
  const int ia = a.id;
  const Index count = rows.count();
  RowVector<Scalar> out = RowVector<Scalar>::Zero(a.cols());
  for (Index i = 0; i < a.rows(); ++i)
    if (rows(i)) out += a.value().row(i);
  if (count > 0) out /= static_cast<Scalar>(count);
  return a.tape->push(Matrix<Scalar>(out), detail::any_grad(a) && count > 0,
                      [ia, rows, count](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
                        Matrix<Scalar> ga = Matrix<Scalar>::Zero(rows.size(), g.cols());
                        const Scalar w = Scalar(1) / static_cast<Scalar>(count);
                        for (Index i = 0; i < ga.rows(); ++i)
                          if (rows(i)) ga.row(i) = w * g.row(0);
                        tp.accumulate(ia, ga);
                      });
}

/// Selects rows of a (with repetition allowed).
template <typename Scalar>
Var<Scalar> select_rows(Var<Scalar> a, std::vector<Index> rows) {
  const int ia = a.id;
  Matrix<Scalar> out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  const Index n_in = a.rows();
  return a.tape->push(std::move(out), detail::any_grad(a),
                      [ia, rows = std::move(rows), n_in](Tape<Scalar>& tp, const Matrix<Scalar>&,
                                                         const Matrix<Scalar>& g) {
                        Matrix<Scalar> ga = Matrix<Scalar>::Zero(n_in, g.cols());
                        for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Index>(i));
                        tp.accumulate(ia, ga);
                      });
}

template <typename Scalar>
Var<Scalar> vstack(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("vstack: no inputs");
  Index rows = 0;
  const Index cols = parts.front().cols();
  bool grad = false;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("vstack: column mismatch");
    rows += p.rows();
    grad = grad || p.tape->needs_grad(p);
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<std::pair<int, Index>> spans;
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    spans.emplace_back(p.id, p.rows());
    r += p.rows();
  }
  return parts.front().tape->push(std::move(out), grad,
                                  [spans](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
                                    Index r0 = 0;
                                    for (const auto& [id, n] : spans) {
                                      tp.accumulate(id, g.middleRows(r0, n));
                                      r0 += n;
                                    }
                                  });
}

template <typename Scalar>
Var<Scalar> hstack(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("hstack: no inputs");
  Index cols = 0;
  const Index rows = parts.front().rows();
  bool grad = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("hstack: row mismatch");
    cols += p.cols();
    grad = grad || p.tape->needs_grad(p);
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<std::pair<int, Index>> spans;
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    spans.emplace_back(p.id, p.cols());
    c += p.cols();
  }
  return parts.front().tape->push(std::move(out), grad,
                                  [spans](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
                                    Index c0 = 0;
                                    for (const auto& [id, n] : spans) {
                                      tp.accumulate(id, g.middleCols(c0, n));
                                      c0 += n;
                                    }
                                  });
}

/// Rows [start, start + n) of a.
template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, Index start, Index n) {
  if (start < 0 || n < 0 || start + n > a.rows()) throw std::out_of_range("slice_rows: out of range");
  const int ia = a.id;
  return a.tape->push(a.value().middleRows(start, n), detail::any_grad(a),
                      [ia, start](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
                        tp.accumulate_block(ia, start, 0, g);
                      });
}

/// Columns [start, start + n) of a.
template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Index start, Index n) {
  if (start < 0 || n < 0 || start + n > a.cols()) throw std::out_of_range("slice_cols: out of range");
  const int ia = a.id;
  return a.tape->push(a.value().middleCols(start, n), detail::any_grad(a),
                      [ia, start](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
                        tp.accumulate_block(ia, 0, start, g);
                      });
}

/// Sum of every entry, as a 1x1.
template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  const int ia = a.id;
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  const Index r = a.rows(), c = a.cols();
  return a.tape->push(std::move(out), detail::any_grad(a),
                      [ia, r, c](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
                        tp.accumulate(ia, Matrix<Scalar>::Constant(r, c, g(0, 0)));
                      });
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return matmul(a, b); }

}  // namespace macd
