// SPDX-License-Identifier: Apache-2.0
//
// Synthetic two-domain interaction logs with planted interests. Items of each
// domain are split into disjoint contiguous clusters; every user draws a small
// weighted set of clusters per domain, target events come from those clusters
// and auxiliary events come from them with probability 1 − noise_rate (else
// uniformly from the whole domain).
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "macd/data.hpp"

namespace macd {

struct SynthConfig {
  int n_users = 2000;
  int n_items_x = 500;
  int n_items_y = 500;
  int n_latent_interests = 20;  // clusters per domain
  int interests_per_user = 2;
  double power_law_exponent = 2.0;
  int min_seq_len = 2;
  int max_seq_len = 50;
  double aux_multiplier = 4.0;
  double noise_rate = 0.5;
  double cross_domain_interest_correlation = 0.8;
  std::uint64_t rng_seed = 7;

  /// Throws std::invalid_argument for a degenerate or out-of-range config.
  void validate() const;
  int n_items(Domain d) const { return d == Domain::X ? n_items_x : n_items_y; }
};

/// The latent interests of one user in one domain.
struct PlantedInterests {
  std::vector<int> clusters;
  std::vector<double> weights;
};

struct SynthUser {
  std::string user_id;
  std::array<PlantedInterests, 2> interests;
};

struct SynthDataset {
  SynthConfig config;
  std::vector<InteractionEvent> events;  // grouped by user, chronological
  std::vector<SynthUser> users;

  /// Cluster of a 1-based item number in domain d.
  int cluster_of(Domain d, int item_number) const;
};

std::string synth_user_id(int u);
std::string synth_item_id(Domain d, int item_number);
/// Inverse of synth_item_id; nullopt for foreign ids.
std::optional<int> parse_synth_item_id(Domain d, const std::string& item_id);

SynthDataset generate_dataset(const SynthConfig& config);

/// `user<TAB>item<TAB>domain<TAB>behavior<TAB>timestamp` lines.
std::string to_tsv(const SynthDataset& data);
std::string ground_truth_json(const SynthDataset& data);

/// Writes the TSV to `path` and the ground truth next to it
/// (`<path>.truth.json`). Returns the dataset.
SynthDataset generate(const SynthConfig& config, const std::filesystem::path& path);

struct InterestPurity {
  std::string user_id;
  std::size_t auxiliary_events = 0;
  std::size_t in_planted_clusters = 0;
  std::optional<double> purity;  // empty for users without auxiliary events
};

/// Per-user share of auxiliary events that fall inside the user's planted
/// clusters. The ground truth is regenerated from `config`; a log that does not
/// come from that config raises std::invalid_argument.
std::vector<InterestPurity> planted_interest_report(const InteractionLog& log, const SynthConfig& config);

}  // namespace macd
