// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "macd/config.hpp"
#include "macd/data.hpp"
#include "macd/synth.hpp"

namespace macd::fixtures {

// 8 users over 16 items per domain; user u owns items 2u+1 and 2u+2 in both
// domains and always ends on 2u+2.
inline Scenario memorization_scenario() {
  std::array<DomainVocab, 2> vocabs{DomainVocab(Domain::X), DomainVocab(Domain::Y)};
  for (int i = 1; i <= 16; ++i) {
    vocabs[0].add("x" + std::to_string(i));
    vocabs[1].add("y" + std::to_string(i));
  }
  std::vector<UserHistory> hs;
  for (int u = 0; u < 8; ++u) {
    UserHistory h;
    h.user_id = "u" + std::to_string(u);
    std::int64_t ts = 0;
    for (Domain d : kDomains) {
      for (int k = 0; k < 4; ++k) h.stream(d, Behavior::Target).push_back({2 * u + 1 + k % 2, ++ts});
      for (int k = 0; k < 3; ++k) h.stream(d, Behavior::Auxiliary).push_back({2 * u + 1 + k % 2, ++ts});
    }
    hs.push_back(std::move(h));
  }
  ScenarioOptions o;
  o.train_fraction = 1.0;
  o.val_fraction = 0.0;
  return make_scenario(std::move(hs), vocabs, o);
}

inline TrainConfig memorization_config() {
  auto c = desk_preset();
  c.d = 32;
  c.h = 2;
  c.T = 5;
  c.T_prime = 8;
  c.batch_size = 8;
  c.epochs = 30;
  c.learning_rate = 2e-2;
  c.negatives_per_positive = 4;
  c.train_cutoff = TrainCutoff::Last;
  return c;
}

// The reference scenario: generator defaults, 25% overlap, 20% cold-start.
inline SynthConfig reference_synth() {
  SynthConfig s;
  s.n_users = 2000;
  s.n_items_x = 500;
  s.n_items_y = 500;
  s.noise_rate = 0.5;
  s.aux_multiplier = 4;
  s.power_law_exponent = 2.0;
  return s;
}

inline ScenarioOptions reference_options() {
  ScenarioOptions o;
  o.overlap_ratio = 0.25;
  o.cold_start_ratio = 0.2;
  o.seed = 0;
  return o;
}

}  // namespace macd::fixtures
