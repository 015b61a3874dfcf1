// SPDX-License-Identifier: Apache-2.0
#include "macd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"

namespace macd {

void SynthConfig::validate() const {
  const auto fail = [](const std::string& m) { throw std::invalid_argument("synth config: " + m); };
  if (n_users <= 0) fail("n_users must be positive");
  if (n_items_x <= 0 || n_items_y <= 0) fail("item counts must be positive");
  if (n_latent_interests <= 0) fail("n_latent_interests must be positive");
  if (n_latent_interests > std::min(n_items_x, n_items_y)) fail("more interest clusters than items");
  if (interests_per_user <= 0 || interests_per_user > n_latent_interests)
    fail("interests_per_user must lie in [1, n_latent_interests]");
  if (!(power_law_exponent > 1)) fail("power_law_exponent must be > 1");
  if (min_seq_len < 1 || max_seq_len < min_seq_len) fail("need 1 <= min_seq_len <= max_seq_len");
  if (!(aux_multiplier >= 1)) fail("aux_multiplier must be >= 1");
  if (!(noise_rate >= 0 && noise_rate <= 1)) fail("noise_rate must lie in [0, 1]");
  if (!(cross_domain_interest_correlation >= 0 && cross_domain_interest_correlation <= 1))
    fail("cross_domain_interest_correlation must lie in [0, 1]");
}

namespace {

/// Items [begin, end) (1-based numbers) of cluster c.
std::pair<int, int> cluster_range(int n_items, int n_clusters, int c) {
  const auto lo = static_cast<long>(n_items) * c / n_clusters;
  const auto hi = static_cast<long>(n_items) * (c + 1) / n_clusters;
  return {static_cast<int>(lo) + 1, static_cast<int>(hi) + 1};
}

PlantedInterests draw_interests(const SynthConfig& cfg, std::mt19937_64& rng) {
  std::vector<int> all(static_cast<std::size_t>(cfg.n_latent_interests));
  std::iota(all.begin(), all.end(), 0);
  PlantedInterests p;
  std::sample(all.begin(), all.end(), std::back_inserter(p.clusters), cfg.interests_per_user, rng);
  std::exponential_distribution<double> gamma1(1.0);
  double total = 0;
  for (std::size_t i = 0; i < p.clusters.size(); ++i) {
    p.weights.push_back(gamma1(rng) + 1e-12);
    total += p.weights.back();
  }
  for (auto& w : p.weights) w /= total;
  return p;
}

}  // namespace

int SynthDataset::cluster_of(Domain d, int item_number) const {
  for (int c = 0; c < config.n_latent_interests; ++c) {
    const auto [lo, hi] = cluster_range(config.n_items(d), config.n_latent_interests, c);
    if (item_number >= lo && item_number < hi) return c;
  }
  return -1;
}

std::string synth_user_id(int u) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "u%06d", u);
  return buf;
}

std::string synth_item_id(Domain d, int item_number) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%05d", d == Domain::X ? 'x' : 'y', item_number);
  return buf;
}

std::optional<int> parse_synth_item_id(Domain d, const std::string& item_id) {
  if (item_id.size() < 2 || item_id[0] != (d == Domain::X ? 'x' : 'y')) return std::nullopt;
  int v = 0;
  for (std::size_t i = 1; i < item_id.size(); ++i) {
    if (item_id[i] < '0' || item_id[i] > '9') return std::nullopt;
    v = v * 10 + (item_id[i] - '0');
  }
  return v;
}

SynthDataset generate_dataset(const SynthConfig& config) {
  config.validate();
  SynthDataset data;
  data.config = config;
  std::mt19937_64 rng(config.rng_seed);

  std::vector<double> length_weights;
  for (int len = config.min_seq_len; len <= config.max_seq_len; ++len)
    length_weights.push_back(std::pow(static_cast<double>(len), -config.power_law_exponent));
  std::discrete_distribution<int> length_dist(length_weights.begin(), length_weights.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int u = 0; u < config.n_users; ++u) {
    SynthUser user;
    user.user_id = synth_user_id(u);
    user.interests[0] = draw_interests(config, rng);
    user.interests[1] = unit(rng) < config.cross_domain_interest_correlation ? user.interests[0]
                                                                              : draw_interests(config, rng);

    std::array<std::array<std::vector<int>, 2>, 2> items;  // [domain][behavior]
    for (Domain d : kDomains) {
      const auto& planted = user.interests[static_cast<std::size_t>(idx(d))];
      const int n_items = config.n_items(d);
      std::discrete_distribution<std::size_t> pick(planted.weights.begin(), planted.weights.end());
      const auto from_interest = [&] {
        const auto [lo, hi] = cluster_range(n_items, config.n_latent_interests, planted.clusters[pick(rng)]);
        return std::uniform_int_distribution<int>(lo, hi - 1)(rng);
      };
      const int target_len = config.min_seq_len + length_dist(rng);
      std::poisson_distribution<int> aux_len(config.aux_multiplier * target_len);
      const int n_aux = aux_len(rng);
      auto& target = items[static_cast<std::size_t>(idx(d))][0];
      auto& aux = items[static_cast<std::size_t>(idx(d))][1];
      for (int i = 0; i < target_len; ++i) target.push_back(from_interest());
      for (int i = 0; i < n_aux; ++i) {
        if (unit(rng) < config.noise_rate) {
          aux.push_back(std::uniform_int_distribution<int>(1, n_items)(rng));
        } else {
          aux.push_back(from_interest());
        }
      }
    }

    // Interleave the four streams in a random order; timestamps count up.
    std::vector<std::pair<int, int>> slots;  // (domain, behavior)
    for (int d = 0; d < 2; ++d)
      for (int b = 0; b < 2; ++b)
        slots.insert(slots.end(), items[static_cast<std::size_t>(d)][static_cast<std::size_t>(b)].size(), {d, b});
    std::shuffle(slots.begin(), slots.end(), rng);
    std::array<std::array<std::size_t, 2>, 2> next{};
    std::int64_t ts = 0;
    for (const auto& [d, b] : slots) {
      InteractionEvent e;
      e.user_id = user.user_id;
      e.domain = static_cast<Domain>(d);
      e.behavior = static_cast<Behavior>(b);
      const auto du = static_cast<std::size_t>(d), bu = static_cast<std::size_t>(b);
      e.item = items[du][bu][next[du][bu]++];
      e.item_id = synth_item_id(e.domain, e.item);
      e.timestamp = ++ts;
      data.events.push_back(std::move(e));
    }
    data.users.push_back(std::move(user));
  }
  return data;
}

std::string to_tsv(const SynthDataset& data) {
  std::string out;
  out.reserve(data.events.size() * 32);
  for (const auto& e : data.events) {
    out += e.user_id;
    out += '\t';
    out += e.item_id;
    out += '\t';
    out += name(e.domain);
    out += '\t';
    out += name(e.behavior);
    out += '\t';
    out += std::to_string(e.timestamp);
    out += '\n';
  }
  return out;
}

std::string ground_truth_json(const SynthDataset& data) {
  using json = nlohmann::ordered_json;
  const auto& c = data.config;
  json j;
  j["config"] = {{"n_users", c.n_users},
                 {"n_items_x", c.n_items_x},
                 {"n_items_y", c.n_items_y},
                 {"n_latent_interests", c.n_latent_interests},
                 {"interests_per_user", c.interests_per_user},
                 {"power_law_exponent", c.power_law_exponent},
                 {"min_seq_len", c.min_seq_len},
                 {"max_seq_len", c.max_seq_len},
                 {"aux_multiplier", c.aux_multiplier},
                 {"noise_rate", c.noise_rate},
                 {"cross_domain_interest_correlation", c.cross_domain_interest_correlation},
                 {"rng_seed", c.rng_seed}};
  json clusters;
  for (Domain d : kDomains) {
    json ranges = json::array();
    for (int k = 0; k < c.n_latent_interests; ++k) {
      const auto [lo, hi] = cluster_range(c.n_items(d), c.n_latent_interests, k);
      ranges.push_back({synth_item_id(d, lo), synth_item_id(d, hi - 1)});
    }
    clusters[std::string(name(d))] = std::move(ranges);
  }
  j["clusters"] = std::move(clusters);
  json users = json::array();
  for (const auto& u : data.users) {
    json ju;
    ju["id"] = u.user_id;
    for (Domain d : kDomains) {
      const auto& p = u.interests[static_cast<std::size_t>(idx(d))];
      ju[std::string(name(d))] = {{"clusters", p.clusters}, {"weights", p.weights}};
    }
    users.push_back(std::move(ju));
  }
  j["users"] = std::move(users);
  return j.dump(1) + "\n";
}

SynthDataset generate(const SynthConfig& config, const std::filesystem::path& path) {
  auto data = generate_dataset(config);
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_tsv(data);
  }
  auto truth = path;
  truth += ".truth.json";
  std::ofstream out(truth, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + truth.string());
  out << ground_truth_json(data);
  return data;
}

std::vector<InterestPurity> planted_interest_report(const InteractionLog& log, const SynthConfig& config) {
  const auto data = generate_dataset(config);
  std::unordered_map<std::string, std::size_t> user_index;
  for (std::size_t i = 0; i < data.users.size(); ++i) user_index.emplace(data.users[i].user_id, i);

  std::vector<InterestPurity> report(data.users.size());
  for (std::size_t i = 0; i < data.users.size(); ++i) report[i].user_id = data.users[i].user_id;
  for (const auto& e : log.events) {
    auto it = user_index.find(e.user_id);
    if (it == user_index.end())
      throw std::invalid_argument("planted_interest_report: user " + e.user_id + " is not in the generated dataset");
    const auto number = parse_synth_item_id(e.domain, e.item_id);
    if (!number || *number < 1 || *number > config.n_items(e.domain))
      throw std::invalid_argument("planted_interest_report: item " + e.item_id + " is not a generated item");
    if (e.behavior != Behavior::Auxiliary) continue;
    auto& r = report[it->second];
    ++r.auxiliary_events;
    const auto& planted = data.users[it->second].interests[static_cast<std::size_t>(idx(e.domain))].clusters;
    if (std::find(planted.begin(), planted.end(), data.cluster_of(e.domain, *number)) != planted.end())
      ++r.in_planted_clusters;
  }
  for (auto& r : report)
    if (r.auxiliary_events > 0)
      r.purity = static_cast<double>(r.in_planted_clusters) / static_cast<double>(r.auxiliary_events);
  return report;
}

}  // namespace macd
