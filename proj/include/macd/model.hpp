// SPDX-License-Identifier: Apache-2.0
//
// The full two-domain model: embeddings, the four backbone slots, intra- and
// cross-domain denoising, fusion gates and prediction heads, plus the batch
// training objective.
#pragma once

#include <array>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "macd/attention.hpp"
#include "macd/autodiff.hpp"
#include "macd/config.hpp"
#include "macd/data.hpp"
#include "macd/embedding.hpp"
#include "macd/encoders.hpp"
#include "macd/objective.hpp"
#include "macd/parameters.hpp"

namespace macd {

/// One user in a training batch. label[d] == 0 means no prediction in d.
struct TrainExample {
  UserView view;
  std::array<int, 2> label{0, 0};
  std::array<std::vector<int>, 2> negatives;
};

/// Per-domain N×d pooled vectors of a batch (rows follow the input order).
template <typename Scalar>
struct Representations {
  std::array<Var<Scalar>, 2> target;    // O
  std::array<Var<Scalar>, 2> explicit_interest;  // O*
  std::array<Var<Scalar>, 2> implicit_interest;  // Ô
  std::array<Var<Scalar>, 2> fused;     // Ō
};

template <typename Scalar>
struct BatchLoss {
  Var<Scalar> total;
  LossBreakdown breakdown;
  std::array<int, 2> pairs{0, 0};  // BCE user–item pairs per domain
};

template <typename Scalar>
class MacdModel {
 public:
  MacdModel(const TrainConfig& config, int n_items_x, int n_items_y, std::uint64_t init_seed)
      : config_(config), n_items_{n_items_x, n_items_y} {
    config_.validate();
    std::mt19937_64 rng(init_seed);
    const int d = config_.d;
    embeddings_ = std::make_unique<EmbeddingTables<Scalar>>(store_, n_items_x, n_items_y, d, config_.T,
                                                             config_.T_prime);
    embeddings_->initialize(rng);
    const char* slot_names[4] = {"encoder.F_X", "encoder.Fc_X", "encoder.F_Y", "encoder.Fc_Y"};
    for (int s = 0; s < 4; ++s) {
      if (config_.share_encoders && s % 2 == 1) continue;
      encoders_[static_cast<std::size_t>(s)] =
          make_encoder<Scalar>(config_.backbone, store_, slot_names[s], d, config_.h, rng);
    }
    for (Domain dom : kDomains) {
      const std::string tag(name(dom));
      iddm_[static_cast<std::size_t>(idx(dom))] =
          std::make_unique<InterestAttention<Scalar>>(store_, "iddm." + tag, d, config_.h);
      iddm_[static_cast<std::size_t>(idx(dom))]->initialize(rng);
    }
    for (Domain dom : kDomains) {
      const std::string tag(name(dom));
      cddm_[static_cast<std::size_t>(idx(dom))] =
          std::make_unique<InterestAttention<Scalar>>(store_, "cddm." + tag, d, config_.h);
      cddm_[static_cast<std::size_t>(idx(dom))]->initialize(rng);
    }
    for (Domain dom : kDomains) {
      const std::string tag(name(dom));
      fgu_[static_cast<std::size_t>(idx(dom))] = std::make_unique<FusionGate<Scalar>>(store_, "fgu." + tag, d);
      fgu_[static_cast<std::size_t>(idx(dom))]->initialize(rng);
    }
    for (Domain dom : kDomains) {
      const std::string tag(name(dom));
      heads_[static_cast<std::size_t>(idx(dom))] =
          std::make_unique<PredictionHead<Scalar>>(store_, "head." + tag, d);
      heads_[static_cast<std::size_t>(idx(dom))]->initialize(rng);
    }
  }

  MacdModel(const MacdModel&) = delete;
  MacdModel& operator=(const MacdModel&) = delete;

  const TrainConfig& config() const { return config_; }
  /// Switches inference-only behavior (IRG) without touching parameters.
  void set_inference_options(bool irg, IrgScope scope, int eval_negatives, int eval_batch_size) {
    config_.irg = irg;
    config_.irg_scope = scope;
    config_.eval_negatives = eval_negatives;
    config_.eval_batch_size = eval_batch_size;
  }
  ParameterStore<Scalar>& parameters() { return store_; }
  const ParameterStore<Scalar>& parameters() const { return store_; }
  int n_items(Domain d) const { return n_items_[static_cast<std::size_t>(idx(d))]; }
  const EmbeddingTables<Scalar>& embeddings() const { return *embeddings_; }
  const SequenceEncoder<Scalar>& encoder(Domain d, Stream s) const { return *encoders_[slot(d, s)]; }
  const InterestAttention<Scalar>& iddm_module(Domain d) const { return *iddm_[static_cast<std::size_t>(idx(d))]; }
  const InterestAttention<Scalar>& cddm_module(Domain d) const { return *cddm_[static_cast<std::size_t>(idx(d))]; }
  const FusionGate<Scalar>& fusion(Domain d) const { return *fgu_[static_cast<std::size_t>(idx(d))]; }
  const PredictionHead<Scalar>& head(Domain d) const { return *heads_[static_cast<std::size_t>(idx(d))]; }

  /// Pooled and fused representations of every user in both domains.
  Representations<Scalar> represent(Tape<Scalar>& t, const std::vector<const UserView*>& views) const {
    const Index d = config_.d;
    std::array<std::vector<Var<Scalar>>, 2> o, o_star, o_hat;
    for (const UserView* v : views) {
      std::array<Encoded, 2> target, aux;
      for (Domain dom : kDomains) {
        const auto k = static_cast<std::size_t>(idx(dom));
        target[k] = encode(t, v->target[k], dom, Stream::Target);
        aux[k] = encode(t, v->auxiliary[k], dom, Stream::Auxiliary);
      }
      for (Domain dom : kDomains) {
        const auto k = static_cast<std::size_t>(idx(dom));
        const auto ko = static_cast<std::size_t>(idx(other(dom)));
        if (config_.architecture == Architecture::AuxConcat) {
          o[k].push_back(concat_pool(t, v->auxiliary[k], v->target[k], dom));
          continue;
        }
        if (!target[k].present) {
          o[k].push_back(t.zeros(1, d));
          o_star[k].push_back(t.zeros(1, d));
          o_hat[k].push_back(t.zeros(1, d));
          continue;
        }
        const Mask all_q = Mask::Constant(target[k].values.rows(), true);
        o[k].push_back(masked_mean_rows(target[k].values, all_q));
        if (config_.iddm && aux[k].present) {
          const Mask all_k = Mask::Constant(aux[k].values.rows(), true);
          o_star[k].push_back(
              masked_mean_rows(iddm(t, *iddm_[k], target[k].values, all_q, aux[k].values, all_k), all_q));
        } else {
          o_star[k].push_back(t.zeros(1, d));
        }
        if (config_.cddm && aux[ko].present) {
          const Mask all_k = Mask::Constant(aux[ko].values.rows(), true);
          o_hat[k].push_back(
              masked_mean_rows(cddm(t, *cddm_[k], target[k].values, all_q, aux[ko].values, all_k), all_q));
        } else {
          o_hat[k].push_back(t.zeros(1, d));
        }
      }
    }

    Representations<Scalar> r;
    for (Domain dom : kDomains) {
      const auto k = static_cast<std::size_t>(idx(dom));
      r.target[k] = vstack(o[k]);
      if (config_.architecture == Architecture::AuxConcat) {
        r.explicit_interest[k] = t.zeros(r.target[k].rows(), d);
        r.implicit_interest[k] = t.zeros(r.target[k].rows(), d);
        r.fused[k] = tanh(r.target[k]);
        continue;
      }
      r.explicit_interest[k] = vstack(o_star[k]);
      r.implicit_interest[k] = vstack(o_hat[k]);
      if (config_.fgu) {
        r.fused[k] = fgu_[k]->fuse(t, r.target[k], r.explicit_interest[k], r.implicit_interest[k]).fused;
      } else {
        Var<Scalar> total = r.target[k];
        int count = 1;
        if (config_.iddm) {
          total = total + r.explicit_interest[k];
          ++count;
        }
        if (config_.cddm) {
          total = total + r.implicit_interest[k];
          ++count;
        }
        r.fused[k] = tanh(affine(total, Scalar(1) / static_cast<Scalar>(count)));
      }
    }
    return r;
  }

  /// λ(L_cl^X + L_cl^Y) + (1 − λ)(L_cls^X + L_cls^Y) over one batch.
  BatchLoss<Scalar> batch_loss(Tape<Scalar>& t, const std::vector<TrainExample>& batch) const {
    std::vector<const UserView*> views;
    views.reserve(batch.size());
    for (const auto& e : batch) views.push_back(&e.view);
    const auto reps = represent(t, views);
    const double lambda = config_.effective_lambda();
    const auto mode =
        config_.strict_eq7 ? ContrastiveDenominator::NegativesOnly : ContrastiveDenominator::IncludePositive;

    BatchLoss<Scalar> out;
    std::array<Var<Scalar>, 2> cl, cls;
    std::array<double, 2> cl_value{0, 0}, cls_value{0, 0};
    for (Domain dom : kDomains) {
      const auto k = static_cast<std::size_t>(idx(dom));
      std::vector<Index> members;
      std::vector<Index> pair_users;
      IndexSequence pair_items;
      std::vector<Scalar> labels;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i].label[k] == 0) continue;
        members.push_back(static_cast<Index>(i));
        pair_users.push_back(static_cast<Index>(i));
        pair_items.push_back(batch[i].label[k]);
        labels.push_back(Scalar(1));
        for (int neg : batch[i].negatives[k]) {
          pair_users.push_back(static_cast<Index>(i));
          pair_items.push_back(neg);
          labels.push_back(Scalar(0));
        }
      }
      cl[k] = t.zeros(1, 1);
      cls[k] = t.zeros(1, 1);
      if (members.empty()) continue;
      if (lambda > 0 && members.size() >= 2) {
        cl[k] = contrastive_loss(select_rows(reps.explicit_interest[k], members),
                                 select_rows(reps.implicit_interest[k], members), static_cast<Scalar>(config_.tau),
                                 mode);
      }
      auto users = select_rows(reps.fused[k], pair_users);
      auto items = gather_rows(t, embeddings_->items(dom), pair_items);
      auto probs = sigmoid(heads_[k]->logits(t, users, items));
      Vector<Scalar> y(static_cast<Index>(labels.size()));
      for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Index>(i)) = labels[i];
      cls[k] = bce_loss(probs, y);
      out.pairs[k] = static_cast<int>(labels.size());
      cl_value[k] = static_cast<double>(cl[k].value()(0, 0));
      cls_value[k] = static_cast<double>(cls[k].value()(0, 0));
    }
    out.breakdown = total_loss(cl_value[0], cl_value[1], cls_value[0], cls_value[1], lambda);
    const auto lam = static_cast<Scalar>(lambda);
    out.total = affine(cl[0] + cl[1], lam) + affine(cls[0] + cls[1], Scalar(1) - lam);
    return out;
  }

  /// Ō for both domains, one row per view, computed without gradients.
  std::array<Matrix<Scalar>, 2> fused(const std::vector<const UserView*>& views) const {
    Tape<Scalar> t;
    const auto reps = represent(t, views);
    return {reps.fused[0].value(), reps.fused[1].value()};
  }

  /// Probabilities of `items` for one user representation in domain d.
  Vector<Scalar> score(Domain d, const RowVector<Scalar>& user, const IndexSequence& items) const {
    const auto& table = embeddings_->items(d).value;
    Matrix<Scalar> rows(static_cast<Index>(items.size()), table.cols());
    for (std::size_t i = 0; i < items.size(); ++i) rows.row(static_cast<Index>(i)) = table.row(items[i]);
    return heads_[static_cast<std::size_t>(idx(d))]->score(user, rows);
  }

 private:
  struct Encoded {
    bool present = false;
    Var<Scalar> values;
  };

  std::size_t slot(Domain d, Stream s) const {
    const int base = idx(d) * 2;
    return static_cast<std::size_t>(config_.share_encoders ? base : base + static_cast<int>(s));
  }

  /// Embeds and encodes only the real suffix of a left-padded sequence. Padded
  /// positions would come out as zero rows and masked keys anyway, so the
  /// pooled results equal those of the full padded computation.
  Encoded encode(Tape<Scalar>& t, const IndexSequence& padded, Domain d, Stream s) const {
    Encoded e;
    const auto [start, items] = real_suffix(padded);
    if (items.empty()) return e;
    e.values = encoders_[slot(d, s)]->encode(t, embed_suffix(t, items, start, d, s),
                                             Mask::Constant(static_cast<Index>(items.size()), true));
    e.present = true;
    return e;
  }

  Var<Scalar> embed_suffix(Tape<Scalar>& t, const IndexSequence& items, Index start, Domain d, Stream s) const {
    auto& pos = embeddings_->positions(s);
    return add(gather_rows(t, embeddings_->items(d), items),
               slice_rows(t.parameter(pos), start, static_cast<Index>(items.size())));
  }

  static std::pair<Index, IndexSequence> real_suffix(const IndexSequence& padded) {
    std::size_t start = 0;
    while (start < padded.size() && padded[start] == 0) ++start;
    return {static_cast<Index>(start), IndexSequence(padded.begin() + static_cast<std::ptrdiff_t>(start), padded.end())};
  }

  /// Raw-auxiliary baseline: the target-slot backbone over C followed by S.
  Var<Scalar> concat_pool(Tape<Scalar>& t, const IndexSequence& aux, const IndexSequence& target, Domain d) const {
    std::vector<Var<Scalar>> parts;
    const auto [aux_start, aux_items] = real_suffix(aux);
    const auto [tgt_start, tgt_items] = real_suffix(target);
    if (!aux_items.empty()) parts.push_back(embed_suffix(t, aux_items, aux_start, d, Stream::Auxiliary));
    if (!tgt_items.empty()) parts.push_back(embed_suffix(t, tgt_items, tgt_start, d, Stream::Target));
    if (parts.empty()) return t.zeros(1, config_.d);
    auto x = vstack(parts);
    const Mask all = Mask::Constant(x.rows(), true);
    return masked_mean_rows(encoders_[slot(d, Stream::Target)]->encode(t, x, all), all);
  }

  TrainConfig config_;
  std::array<int, 2> n_items_;
  ParameterStore<Scalar> store_;
  std::unique_ptr<EmbeddingTables<Scalar>> embeddings_;
  std::array<std::unique_ptr<SequenceEncoder<Scalar>>, 4> encoders_;
  std::array<std::unique_ptr<InterestAttention<Scalar>>, 2> iddm_, cddm_;
  std::array<std::unique_ptr<FusionGate<Scalar>>, 2> fgu_;
  std::array<std::unique_ptr<PredictionHead<Scalar>>, 2> heads_;
};

}  // namespace macd
