// SPDX-License-Identifier: Apache-2.0
//
// Sequential information encoders F. Every encoder maps a length×d sequence
// plus its padding mask to a length×d sequence with padded rows zeroed, so any
// implementation can be bound to any of the four slots (F^X, F^Y, F_c^X, F_c^Y).
#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>

#include "macd/attention.hpp"
#include "macd/autodiff.hpp"
#include "macd/parameters.hpp"
#include "macd/tensor.hpp"

namespace macd {

enum class EncoderKind { MeanPool, Recurrent, SelfAttentive };

inline std::string_view name(EncoderKind k) {
  switch (k) {
    case EncoderKind::MeanPool: return "mean_pool";
    case EncoderKind::Recurrent: return "recurrent";
    case EncoderKind::SelfAttentive: return "self_attentive";
  }
  return "?";
}

inline EncoderKind parse_encoder_kind(std::string_view s) {
  if (s == "mean_pool") return EncoderKind::MeanPool;
  if (s == "recurrent") return EncoderKind::Recurrent;
  if (s == "self_attentive") return EncoderKind::SelfAttentive;
  throw std::invalid_argument("unknown backbone '" + std::string(s) +
                              "' (expected mean_pool, recurrent or self_attentive)");
}

template <typename Scalar>
class SequenceEncoder {
 public:
  virtual ~SequenceEncoder() = default;
  virtual Var<Scalar> encode(Tape<Scalar>& t, Var<Scalar> inputs, const Mask& mask) const = 0;
  virtual EncoderKind kind() const = 0;
  virtual bool causal() const = 0;
};

/// output[t] = mean of the real inputs at positions <= t; zero at padding and
/// wherever nothing real has been seen yet. No parameters.
template <typename Scalar>
class MeanPoolEncoder final : public SequenceEncoder<Scalar> {
 public:
  Var<Scalar> encode(Tape<Scalar>& t, Var<Scalar> inputs, const Mask& mask) const override {
    const Index n = inputs.rows();
    if (mask.size() != n) throw std::invalid_argument("mean_pool_encoder: mask length mismatch");
    Matrix<Scalar> weights = Matrix<Scalar>::Zero(n, n);
    Index seen = 0;
    for (Index i = 0; i < n; ++i) {
      if (mask(i)) ++seen;
      if (!mask(i) || seen == 0) continue;
      for (Index j = 0; j <= i; ++j)
        if (mask(j)) weights(i, j) = Scalar(1) / static_cast<Scalar>(seen);
    }
    return matmul(t.constant(std::move(weights)), inputs);
  }
  EncoderKind kind() const override { return EncoderKind::MeanPool; }
  bool causal() const override { return true; }
};

/// Gated recurrent cell run over the real positions only:
///   z = σ(x W_z + h U_z + b_z), r = σ(x W_r + h U_r + b_r)
///   n = tanh(x W_n + (r ⊙ h) U_n + b_n),  h' = (1 − z) ⊙ h + z ⊙ n
template <typename Scalar>
class RecurrentEncoder final : public SequenceEncoder<Scalar> {
 public:
  RecurrentEncoder(ParameterStore<Scalar>& store, const std::string& prefix, int d) {
    for (const char* g : {"z", "r", "n"}) {
      w_.push_back(&store.add(prefix + ".W_" + g, d, d));
      u_.push_back(&store.add(prefix + ".U_" + g, d, d));
      b_.push_back(&store.add(prefix + ".b_" + g, 1, d));
    }
  }

  template <typename Rng>
  void initialize(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w_[0]->value.rows()));
    for (std::size_t g = 0; g < 3; ++g) {
      init_uniform(*w_[g], bound, rng);
      init_uniform(*u_[g], bound, rng);
    }
  }

  Parameter<Scalar>& bias(int gate) const { return *b_[static_cast<std::size_t>(gate)]; }

  Var<Scalar> encode(Tape<Scalar>& t, Var<Scalar> inputs, const Mask& mask) const override {
    const Index n = inputs.rows(), d = inputs.cols();
    if (mask.size() != n) throw std::invalid_argument("recurrent_encoder: mask length mismatch");
    if (!mask.any()) return t.zeros(n, d);
    Var<Scalar> xz = add_row(inputs * t.parameter(*w_[0]), t.parameter(*b_[0]));
    Var<Scalar> xr = add_row(inputs * t.parameter(*w_[1]), t.parameter(*b_[1]));
    Var<Scalar> xn = add_row(inputs * t.parameter(*w_[2]), t.parameter(*b_[2]));
    auto uz = t.parameter(*u_[0]);
    auto ur = t.parameter(*u_[1]);
    auto un = t.parameter(*u_[2]);
    Var<Scalar> h = t.zeros(1, d);
    std::vector<Var<Scalar>> rows;
    rows.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      if (!mask(i)) {
        rows.push_back(t.zeros(1, d));
        continue;
      }
      auto z = sigmoid(slice_rows(xz, i, 1) + h * uz);
      auto r = sigmoid(slice_rows(xr, i, 1) + h * ur);
      auto cand = tanh(slice_rows(xn, i, 1) + hadamard(r, h) * un);
      h = h + hadamard(z, cand - h);
      rows.push_back(h);
    }
    return vstack(rows);
  }
  EncoderKind kind() const override { return EncoderKind::Recurrent; }
  bool causal() const override { return true; }

 private:
  std::vector<Parameter<Scalar>*> w_, u_, b_;
};

/// One causal self-attention block with h heads, a residual connection and a
/// position-wise feed-forward layer (also residual).
template <typename Scalar>
class SelfAttentiveEncoder final : public SequenceEncoder<Scalar> {
 public:
  SelfAttentiveEncoder(ParameterStore<Scalar>& store, const std::string& prefix, int d, int heads)
      : heads_(heads),
        wq_(&store.add(prefix + ".W_q", d, d)),
        wk_(&store.add(prefix + ".W_k", d, d)),
        wv_(&store.add(prefix + ".W_v", d, d)),
        wo_(&store.add(prefix + ".W_o", d, d)),
        w1_(&store.add(prefix + ".ffn.W_1", d, d)),
        b1_(&store.add(prefix + ".ffn.b_1", 1, d)),
        w2_(&store.add(prefix + ".ffn.W_2", d, d)),
        b2_(&store.add(prefix + ".ffn.b_2", 1, d)) {
    if (heads <= 0 || d % heads != 0) throw std::invalid_argument(prefix + ": d must be divisible by h");
  }

  template <typename Rng>
  void initialize(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(wq_->value.rows()));
    for (auto* p : {wq_, wk_, wv_, w1_}) init_uniform(*p, bound, rng);
    // residual branches start small
    for (auto* p : {wo_, w2_}) init_uniform(*p, 0.1 * bound, rng);
  }

  Parameter<Scalar>& value_projection() const { return *wv_; }
  Parameter<Scalar>& output_projection() const { return *wo_; }

  /// The attention sublayer alone: concat(heads)·W_o before the residual.
  Var<Scalar> attention(Tape<Scalar>& t, Var<Scalar> inputs, const Mask& mask) const {
    auto q = inputs * t.parameter(*wq_);
    auto k = inputs * t.parameter(*wk_);
    auto v = inputs * t.parameter(*wv_);
    return multi_head_attention(q, k, v, heads_, mask, true) * t.parameter(*wo_);
  }

  Var<Scalar> encode(Tape<Scalar>& t, Var<Scalar> inputs, const Mask& mask) const override {
    if (mask.size() != inputs.rows()) throw std::invalid_argument("self_attentive_encoder: mask length mismatch");
    if (!mask.any()) return t.zeros(inputs.rows(), inputs.cols());
    auto hidden = inputs + attention(t, inputs, mask);
    auto ffn = add_row(relu(add_row(hidden * t.parameter(*w1_), t.parameter(*b1_))) * t.parameter(*w2_),
                       t.parameter(*b2_));
    return mask_rows(hidden + ffn, mask);
  }
  EncoderKind kind() const override { return EncoderKind::SelfAttentive; }
  bool causal() const override { return true; }

 private:
  int heads_;
  Parameter<Scalar>* wq_;
  Parameter<Scalar>* wk_;
  Parameter<Scalar>* wv_;
  Parameter<Scalar>* wo_;
  Parameter<Scalar>* w1_;
  Parameter<Scalar>* b1_;
  Parameter<Scalar>* w2_;
  Parameter<Scalar>* b2_;
};

/// Builds and initializes an encoder whose parameters live under `prefix`.
template <typename Scalar, typename Rng>
std::unique_ptr<SequenceEncoder<Scalar>> make_encoder(EncoderKind kind, ParameterStore<Scalar>& store,
                                                      const std::string& prefix, int d, int heads, Rng& rng) {
  switch (kind) {
    case EncoderKind::MeanPool:
      return std::make_unique<MeanPoolEncoder<Scalar>>();
    case EncoderKind::Recurrent: {
      auto e = std::make_unique<RecurrentEncoder<Scalar>>(store, prefix, d);
      e->initialize(rng);
      return e;
    }
    case EncoderKind::SelfAttentive: {
      auto e = std::make_unique<SelfAttentiveEncoder<Scalar>>(store, prefix, d, heads);
      e->initialize(rng);
      return e;
    }
  }
  throw std::invalid_argument("unknown encoder kind");
}

}  // namespace macd
