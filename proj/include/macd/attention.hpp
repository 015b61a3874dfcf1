// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "macd/autodiff.hpp"
#include "macd/parameters.hpp"
#include "macd/tensor.hpp"

namespace macd {

/// Row-wise softmax over the keys allowed by key_mask (and by j <= i when
/// causal). Disallowed keys get exactly zero weight; a row with no allowed key
/// is all zero.
template <typename Scalar>
Matrix<Scalar> masked_softmax(const Matrix<Scalar>& logits, const Mask& key_mask, bool causal) {
  if (key_mask.size() != logits.cols()) throw std::invalid_argument("masked_softmax: mask length mismatch");
  Matrix<Scalar> w = Matrix<Scalar>::Zero(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const Index last = causal ? std::min<Index>(i + 1, logits.cols()) : logits.cols();
    Scalar top = -std::numeric_limits<Scalar>::infinity();
    for (Index j = 0; j < last; ++j)
      if (key_mask(j)) top = std::max(top, logits(i, j));
    if (top == -std::numeric_limits<Scalar>::infinity()) continue;
    Scalar total = 0;
    for (Index j = 0; j < last; ++j) {
      if (!key_mask(j)) continue;
      w(i, j) = std::exp(logits(i, j) - top);
      total += w(i, j);
    }
    w.row(i) /= total;
  }
  return w;
}

template <typename Scalar>
struct AttentionResult {
  Matrix<Scalar> output;
  Matrix<Scalar> weights;
};

/// softmax(Q·Kᵀ/√d_k)·V restricted to unmasked keys.
template <typename Scalar>
AttentionResult<Scalar> scaled_dot_attention(const Matrix<Scalar>& q, const Matrix<Scalar>& k,
                                             const Matrix<Scalar>& v, const Mask& key_mask,
                                             bool causal = false) {
  if (q.cols() != k.cols() || k.rows() != v.rows())
    throw std::invalid_argument("scaled_dot_attention: shape mismatch");
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  AttentionResult<Scalar> r;
  r.weights = masked_softmax<Scalar>(scale * q * k.transpose(), key_mask, causal);
  r.output = r.weights * v;
  return r;
}

/// Differentiable multi-head attention over already-projected Q (n×d), K and
/// V (m×d). Heads are contiguous column blocks of width d/heads; the output is
/// their concatenation (n×d).
template <typename Scalar>
Var<Scalar> multi_head_attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v, int heads,
                                 const Mask& key_mask, bool causal) {
  const Index d = q.cols();
  if (heads <= 0 || d % heads != 0) throw std::invalid_argument("multi_head_attention: d not divisible by heads");
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows())
    throw std::invalid_argument("multi_head_attention: shape mismatch");
  const Index dk = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dk));
  auto weights = std::make_shared<std::vector<Matrix<Scalar>>>();
  Matrix<Scalar> out(q.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const Index c = h * dk;
    weights->push_back(masked_softmax<Scalar>(
        scale * q.value().middleCols(c, dk) * k.value().middleCols(c, dk).transpose(), key_mask, causal));
    out.middleCols(c, dk) = weights->back() * v.value().middleCols(c, dk);
  }
  const int iq = q.id, ik = k.id, iv = v.id;
  return q.tape->push(
      std::move(out), detail::any_grad(q, k, v),
      [iq, ik, iv, heads, dk, scale, weights](Tape<Scalar>& tp, const Matrix<Scalar>&, const Matrix<Scalar>& g) {
        const auto& qv = tp.value(iq);
        const auto& kv = tp.value(ik);
        const auto& vv = tp.value(iv);
        Matrix<Scalar> gq = Matrix<Scalar>::Zero(qv.rows(), qv.cols());
        Matrix<Scalar> gk = Matrix<Scalar>::Zero(kv.rows(), kv.cols());
        Matrix<Scalar> gv = Matrix<Scalar>::Zero(vv.rows(), vv.cols());
        for (int h = 0; h < heads; ++h) {
          const Index c = h * dk;
          const Matrix<Scalar>& p = (*weights)[static_cast<std::size_t>(h)];
          const auto gh = g.middleCols(c, dk);
          gv.middleCols(c, dk).noalias() = p.transpose() * gh;
          Matrix<Scalar> gp = gh * vv.middleCols(c, dk).transpose();
          const Vector<Scalar> dots = gp.cwiseProduct(p).rowwise().sum();
          Matrix<Scalar> gz = p.cwiseProduct(gp.colwise() - dots);
          gq.middleCols(c, dk).noalias() = scale * gz * kv.middleCols(c, dk);
          gk.middleCols(c, dk).noalias() = scale * gz.transpose() * qv.middleCols(c, dk);
        }
        tp.accumulate(iq, gq);
        tp.accumulate(ik, gk);
        tp.accumulate(iv, gv);
      });
}

/// Interest-guided multi-head attention: queries from an encoded target
/// sequence, keys and values from an encoded auxiliary sequence. The same
/// mechanics back the intra-domain (same-domain keys) and cross-domain
/// (other-domain keys) denoising modules; each instance owns its weights.
///
/// W_q, W_k, W_v are stored as d×d matrices whose column blocks of width d/h
/// are the per-head projections; W_o is d×d.
template <typename Scalar>
class InterestAttention {
 public:
  InterestAttention(ParameterStore<Scalar>& store, const std::string& prefix, int d, int heads)
      : heads_(heads),
        wq_(&store.add(prefix + ".W_q", d, d)),
        wk_(&store.add(prefix + ".W_k", d, d)),
        wv_(&store.add(prefix + ".W_v", d, d)),
        wo_(&store.add(prefix + ".W_o", d, d)) {
    if (heads <= 0 || d % heads != 0) throw std::invalid_argument(prefix + ": d must be divisible by h");
  }

  template <typename Rng>
  void initialize(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(wq_->value.rows()));
    for (auto* p : {wq_, wk_}) init_uniform(*p, bound, rng);
    for (auto* p : {wv_, wo_}) {
      init_uniform(*p, 0.1 * bound, rng);
      p->value.diagonal().array() += Scalar(1);
    }
  }

  int heads() const { return heads_; }

  /// Rows at padded query positions are zero; an all-padding key stream gives
  /// an all-zero result.
  Var<Scalar> attend(Tape<Scalar>& t, Var<Scalar> queries, const Mask& query_mask, Var<Scalar> keys,
                     const Mask& key_mask) const {
    if (queries.cols() != wq_->value.rows() || keys.cols() != wq_->value.rows())
      throw std::invalid_argument("InterestAttention: input width mismatch");
    if (query_mask.size() != queries.rows() || key_mask.size() != keys.rows())
      throw std::invalid_argument("InterestAttention: mask length mismatch");
    if (!query_mask.any() || !key_mask.any()) return t.zeros(queries.rows(), queries.cols());
    auto q = queries * t.parameter(*wq_);
    auto k = keys * t.parameter(*wk_);
    auto v = keys * t.parameter(*wv_);
    auto heads = multi_head_attention(q, k, v, heads_, key_mask, false);
    return mask_rows(heads * t.parameter(*wo_), query_mask);
  }

 private:
  int heads_;
  Parameter<Scalar>* wq_;
  Parameter<Scalar>* wk_;
  Parameter<Scalar>* wv_;
  Parameter<Scalar>* wo_;
};

/// Explicit-interest representation S*: target-sequence queries over the
/// same domain's auxiliary stream.
template <typename Scalar>
Var<Scalar> iddm(Tape<Scalar>& t, const InterestAttention<Scalar>& module, Var<Scalar> target_encoded,
                 const Mask& target_mask, Var<Scalar> aux_encoded, const Mask& aux_mask) {
  return module.attend(t, target_encoded, target_mask, aux_encoded, aux_mask);
}

/// Implicit-interest representation Ŝ: target-sequence queries over the other
/// domain's auxiliary stream.
template <typename Scalar>
Var<Scalar> cddm(Tape<Scalar>& t, const InterestAttention<Scalar>& module, Var<Scalar> target_encoded,
                 const Mask& target_mask, Var<Scalar> other_aux_encoded, const Mask& other_aux_mask) {
  return module.attend(t, target_encoded, target_mask, other_aux_encoded, other_aux_mask);
}

}  // namespace macd
