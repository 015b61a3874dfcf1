// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>

#include "macd/autodiff.hpp"
#include "macd/parameters.hpp"
#include "macd/tensor.hpp"

namespace macd {

enum class Stream : int { Target = 0, Auxiliary = 1 };

template <typename Scalar>
struct EmbeddedSequence {
  Var<Scalar> values;  // length × d
  Mask mask;           // true at real items
};

/// Item tables E_X, E_Y ((|V|+1)×d, row 0 = padding) and positional tables
/// P_S (T×d) and P_C (T'×d).
template <typename Scalar>
class EmbeddingTables {
 public:
  EmbeddingTables(ParameterStore<Scalar>& store, int n_items_x, int n_items_y, int d, int target_len,
                  int aux_len)
      : d_(d),
        items_{&store.add("embedding.E_X", n_items_x + 1, d, true),
               &store.add("embedding.E_Y", n_items_y + 1, d, true)},
        positions_{&store.add("embedding.P_S", target_len, d), &store.add("embedding.P_C", aux_len, d)} {}

  template <typename Rng>
  void initialize(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_));
    for (auto* p : {items_[0], items_[1], positions_[0], positions_[1]}) init_uniform(*p, bound, rng);
  }

  int dim() const { return d_; }
  Parameter<Scalar>& items(Domain d) const { return *items_[idx(d)]; }
  Parameter<Scalar>& positions(Stream s) const { return *positions_[static_cast<int>(s)]; }
  int vocab_size(Domain d) const { return static_cast<int>(items_[idx(d)]->value.rows()) - 1; }

  /// output[t] = E[indices[t]] + P[t]; padded positions carry only P[t].
  EmbeddedSequence<Scalar> embed(Tape<Scalar>& t, const IndexSequence& indices, Domain domain,
                                 Stream stream) const {
    auto& pos = positions(stream);
    if (static_cast<Index>(indices.size()) != pos.value.rows())
      throw std::invalid_argument("embed: sequence length " + std::to_string(indices.size()) +
                                  " does not match positional table " + pos.name);
    auto rows = gather_rows(t, items(domain), indices);
    return {add(rows, t.parameter(pos)), padding_mask(indices)};
  }

 private:
  int d_;
  Parameter<Scalar>* items_[2];
  Parameter<Scalar>* positions_[2];
};

}  // namespace macd
