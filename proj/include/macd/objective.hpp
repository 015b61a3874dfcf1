// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "macd/autodiff.hpp"
#include "macd/parameters.hpp"
#include "macd/tensor.hpp"

namespace macd {

// ---------------------------------------------------------------------------
// Temporal pooling φ

/// Mean over unpadded rows; the zero vector when every row is padding.
template <typename Scalar>
RowVector<Scalar> mean_pool(const Matrix<Scalar>& seq, const Mask& mask) {
  if (mask.size() != seq.rows()) throw std::invalid_argument("mean_pool: mask length mismatch");
  RowVector<Scalar> out = RowVector<Scalar>::Zero(seq.cols());
  const Index n = mask.count();
  if (n == 0) return out;
  for (Index i = 0; i < seq.rows(); ++i)
    if (mask(i)) out += seq.row(i);
  return out / static_cast<Scalar>(n);
}

template <typename Scalar>
Var<Scalar> mean_pool(Var<Scalar> seq, const Mask& mask) {
  return masked_mean_rows(seq, mask);
}

// ---------------------------------------------------------------------------
// Contrastive information regularizer

enum class ContrastiveDenominator {
  IncludePositive,  // standard InfoNCE, loss in (0, ∞)
  NegativesOnly,    // literal j ≠ i form, unbounded below
};

namespace detail {

/// Logits l_ij = −‖a_i − b_j‖² / τ.
template <typename Scalar>
Matrix<Scalar> contrastive_logits(const Matrix<Scalar>& anchors, const Matrix<Scalar>& positives, Scalar tau) {
  const Vector<Scalar> an = anchors.rowwise().squaredNorm();
  const Vector<Scalar> pn = positives.rowwise().squaredNorm();
  Matrix<Scalar> cross = anchors * positives.transpose();
  Matrix<Scalar> dist = (-2 * cross).colwise() + an;
  dist.rowwise() += pn.transpose();
  return -dist / tau;
}

/// Loss value and dLoss/dl (N×N).
template <typename Scalar>
std::pair<Scalar, Matrix<Scalar>> contrastive_core(const Matrix<Scalar>& logits, ContrastiveDenominator mode) {
  const Index n = logits.rows();
  Matrix<Scalar> g = Matrix<Scalar>::Zero(n, n);
  Scalar loss = 0;
  for (Index i = 0; i < n; ++i) {
    Scalar top = -std::numeric_limits<Scalar>::infinity();
    Index arg = -1;
    for (Index j = 0; j < n; ++j) {
      if (j == i && mode == ContrastiveDenominator::NegativesOnly) continue;
      if (logits(i, j) > top) {
        top = logits(i, j);
        arg = j;
      }
    }
    // log(1 + rest) keeps tiny losses from rounding to zero
    Scalar rest = 0;
    for (Index j = 0; j < n; ++j) {
      if (j == i && mode == ContrastiveDenominator::NegativesOnly) continue;
      g(i, j) = std::exp(logits(i, j) - top);
      if (j != arg) rest += g(i, j);
    }
    g.row(i) /= Scalar(1) + rest;
    loss += -logits(i, i) + top + std::log1p(rest);
    g(i, i) -= 1;
  }
  return {loss, g};
}

}  // namespace detail

/// Σ_i −log( exp(s(a_i, b_i)/τ) / Σ_j exp(s(a_i, b_j)/τ) ) with
/// s(a, b) = −‖a − b‖² over in-batch pairs. Rows are users.
template <typename Scalar>
Scalar contrastive_loss(const Matrix<Scalar>& anchors, const Matrix<Scalar>& positives, Scalar tau,
                        ContrastiveDenominator mode = ContrastiveDenominator::IncludePositive) {
  if (anchors.rows() < 2) throw std::invalid_argument("contrastive_loss: need at least 2 users for negatives");
  if (anchors.rows() != positives.rows() || anchors.cols() != positives.cols())
    throw std::invalid_argument("contrastive_loss: shape mismatch");
  if (!(tau > 0)) throw std::invalid_argument("contrastive_loss: tau must be positive");
  return detail::contrastive_core<Scalar>(detail::contrastive_logits<Scalar>(anchors, positives, tau), mode).first;
}

template <typename Scalar>
Var<Scalar> contrastive_loss(Var<Scalar> anchors, Var<Scalar> positives, Scalar tau,
                             ContrastiveDenominator mode = ContrastiveDenominator::IncludePositive) {
  if (anchors.rows() < 2) throw std::invalid_argument("contrastive_loss: need at least 2 users for negatives");
  if (anchors.rows() != positives.rows() || anchors.cols() != positives.cols())
    throw std::invalid_argument("contrastive_loss: shape mismatch");
  if (!(tau > 0)) throw std::invalid_argument("contrastive_loss: tau must be positive");
  auto [loss, dl] = detail::contrastive_core<Scalar>(
      detail::contrastive_logits<Scalar>(anchors.value(), positives.value(), tau), mode);
  Matrix<Scalar> out(1, 1);
  out(0, 0) = loss;
  const int ia = anchors.id, ip = positives.id;
  return anchors.tape->push(
      std::move(out), detail::any_grad(anchors, positives),
      [ia, ip, tau, dl = std::move(dl)](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
        const auto& a = tp.value(ia);
        const auto& b = tp.value(ip);
        const Scalar c = 2 * g(0, 0) / tau;
        const Vector<Scalar> row_sums = dl.rowwise().sum();
        const Vector<Scalar> col_sums = dl.colwise().sum().transpose();
        if (tp.needs_grad(ia)) tp.accumulate(ia, -c * (row_sums.asDiagonal() * a - dl * b));
        if (tp.needs_grad(ip)) tp.accumulate(ip, c * (dl.transpose() * a - col_sums.asDiagonal() * b));
      });
}

// ---------------------------------------------------------------------------
// Fusion gate unit

template <typename Scalar>
struct FusionOutput {
  Var<Scalar> gate1;         // H1
  Var<Scalar> intermediate;  // O_m
  Var<Scalar> gate2;         // H2
  Var<Scalar> fused;         // Ō
};

/// Two-stage gated fusion of the pooled target (O), explicit (O*) and implicit
/// (Ô) interest vectors. Inputs are N×d with one user per row.
template <typename Scalar>
class FusionGate {
 public:
  FusionGate(ParameterStore<Scalar>& store, const std::string& prefix, int d) {
    for (int i = 1; i <= 4; ++i) {
      w_.push_back(&store.add(prefix + ".W_" + std::to_string(i), d, d));
      b_.push_back(&store.add(prefix + ".b_" + std::to_string(i), 1, d));
    }
  }

  template <typename Rng>
  void initialize(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w_[0]->value.rows()));
    for (auto* w : w_) init_uniform(*w, bound, rng);
    b_[0]->value.setConstant(Scalar(-2));
    b_[2]->value.setConstant(Scalar(-2));
  }

  Parameter<Scalar>& weight(int i) const { return *w_[static_cast<std::size_t>(i - 1)]; }
  Parameter<Scalar>& bias(int i) const { return *b_[static_cast<std::size_t>(i - 1)]; }

  FusionOutput<Scalar> fuse(Tape<Scalar>& t, Var<Scalar> target, Var<Scalar> explicit_interest,
                            Var<Scalar> implicit_interest) const {
    FusionOutput<Scalar> r;
    r.gate1 = sigmoid(add_row(add_row(target * t.parameter(*w_[0]), t.parameter(*b_[0])) +
                                  explicit_interest * t.parameter(*w_[1]),
                              t.parameter(*b_[1])));
    // (1 − H) ⊙ a + H ⊙ b == a + H ⊙ (b − a)
    r.intermediate = tanh(target + hadamard(r.gate1, explicit_interest - target));
    r.gate2 = sigmoid(add_row(add_row(r.intermediate * t.parameter(*w_[2]), t.parameter(*b_[2])) +
                                  implicit_interest * t.parameter(*w_[3]),
                              t.parameter(*b_[3])));
    r.fused = tanh(r.intermediate + hadamard(r.gate2, implicit_interest - r.intermediate));
    return r;
  }

 private:
  std::vector<Parameter<Scalar>*> w_, b_;
};

// ---------------------------------------------------------------------------
// Prediction head

/// σ(MLP(Ō ‖ v)) with MLP 2d → d → d/2 → 1 and ReLU between layers.
template <typename Scalar>
class PredictionHead {
 public:
  PredictionHead(ParameterStore<Scalar>& store, const std::string& prefix, int d) {
    const int half = std::max(1, d / 2);
    const int widths[] = {2 * d, d, half, 1};
    for (int i = 0; i < 3; ++i) {
      w_.push_back(&store.add(prefix + ".W_" + std::to_string(i + 1), widths[i], widths[i + 1]));
      b_.push_back(&store.add(prefix + ".b_" + std::to_string(i + 1), 1, widths[i + 1]));
    }
  }

  template <typename Rng>
  void initialize(Rng& rng) {
    // He-uniform for the ReLU stack
    for (auto* w : w_) init_uniform(*w, std::sqrt(6.0 / static_cast<double>(w->value.rows())), rng);
  }

  std::size_t layers() const { return w_.size(); }
  Parameter<Scalar>& weight(std::size_t i) const { return *w_[i]; }
  Parameter<Scalar>& bias(std::size_t i) const { return *b_[i]; }

  /// Pre-sigmoid scores for paired rows of users and items (P×d each) → P×1.
  Var<Scalar> logits(Tape<Scalar>& t, Var<Scalar> users, Var<Scalar> items) const {
    Var<Scalar> h = hstack<Scalar>({users, items});
    for (std::size_t i = 0; i < w_.size(); ++i) {
      h = add_row(h * t.parameter(*w_[i]), t.parameter(*b_[i]));
      if (i + 1 < w_.size()) h = relu(h);
    }
    return h;
  }

  /// Probabilities for one user against K candidate item rows (K×d) → K.
  Vector<Scalar> score(const RowVector<Scalar>& user, const Matrix<Scalar>& items) const {
    const Index d = user.cols();
    const auto& w1 = w_[0]->value;
    RowVector<Scalar> user_part = user * w1.topRows(d) + b_[0]->value;
    Matrix<Scalar> h = (items * w1.bottomRows(d)).rowwise() + user_part;
    h = h.cwiseMax(Scalar(0));
    for (std::size_t i = 1; i < w_.size(); ++i) {
      h = (h * w_[i]->value).rowwise() + b_[i]->value.row(0);
      if (i + 1 < w_.size()) h = h.cwiseMax(Scalar(0));
    }
    return (Scalar(1) / (Scalar(1) + (-h.col(0).array()).exp())).matrix();
  }

 private:
  std::vector<Parameter<Scalar>*> w_, b_;
};

// ---------------------------------------------------------------------------
// Losses

inline constexpr double kProbabilityClamp = 1e-7;

/// −[y log ŷ + (1 − y) log(1 − ŷ)] with ŷ clamped to [ε, 1 − ε].
template <typename Scalar>
Scalar bce_loss(Scalar y_hat, Scalar y) {
  const Scalar eps = static_cast<Scalar>(kProbabilityClamp);
  const Scalar p = std::clamp(y_hat, eps, Scalar(1) - eps);
  return -(y * std::log(p) + (Scalar(1) - y) * std::log(Scalar(1) - p));
}

/// Summed BCE over a column of probabilities; clamped entries pass no gradient.
template <typename Scalar>
Var<Scalar> bce_loss(Var<Scalar> probabilities, const Vector<Scalar>& labels) {
  if (probabilities.cols() != 1 || probabilities.rows() != labels.size())
    throw std::invalid_argument("bce_loss: shape mismatch");
  Matrix<Scalar> out(1, 1);
  out(0, 0) = 0;
  for (Index i = 0; i < labels.size(); ++i) out(0, 0) += bce_loss(probabilities.value()(i, 0), labels(i));
  const int ip = probabilities.id;
  return probabilities.tape->push(
      std::move(out), detail::any_grad(probabilities),
      [ip, labels](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
        const auto& p = tp.value(ip);
        const Scalar eps = static_cast<Scalar>(kProbabilityClamp);
        Matrix<Scalar> gp = Matrix<Scalar>::Zero(p.rows(), 1);
        for (Index i = 0; i < p.rows(); ++i) {
          const Scalar v = p(i, 0);
          if (v < eps || v > Scalar(1) - eps) continue;
          gp(i, 0) = g(0, 0) * (-labels(i) / v + (Scalar(1) - labels(i)) / (Scalar(1) - v));
        }
        tp.accumulate(ip, gp);
      });
}

struct LossBreakdown {
  double l_cl_x = 0;
  double l_cl_y = 0;
  double l_cls_x = 0;
  double l_cls_y = 0;
  double lambda = 0;
  double total = 0;
};

/// L = λ(L_cl^X + L_cl^Y) + (1 − λ)(L_cls^X + L_cls^Y)
inline LossBreakdown total_loss(double l_cl_x, double l_cl_y, double l_cls_x, double l_cls_y, double lambda) {
  if (lambda < 0 || lambda > 1) throw std::invalid_argument("total_loss: lambda must lie in [0, 1]");
  LossBreakdown b{l_cl_x, l_cl_y, l_cls_x, l_cls_y, lambda, 0};
  b.total = lambda * (l_cl_x + l_cl_y) + (1 - lambda) * (l_cls_x + l_cls_y);
  return b;
}

}  // namespace macd
