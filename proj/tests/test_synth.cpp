// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "macd/data.hpp"
#include "macd/synth.hpp"

using namespace macd;

namespace {

SynthConfig small(int users = 400) {
  SynthConfig c;
  c.n_users = users;
  c.n_items_x = 500;
  c.n_items_y = 500;
  return c;
}

InteractionLog reingest(const SynthDataset& data) {
  std::istringstream in(to_tsv(data));
  return ingest_log(in, 1, "synth");
}

}  // namespace

TEST(Synth, NoiselessAuxiliaryStaysInPlantedClusters) {
  auto c = small();
  c.noise_rate = 0;
  const auto data = generate_dataset(c);
  std::size_t aux = 0;
  for (const auto& e : data.events) {
    if (e.behavior != Behavior::Auxiliary) continue;
    ++aux;
    const auto& planted = data.users[std::stoul(e.user_id.substr(1))].interests[static_cast<std::size_t>(idx(e.domain))];
    const int cluster = data.cluster_of(e.domain, e.item);
    EXPECT_NE(std::find(planted.clusters.begin(), planted.clusters.end(), cluster), planted.clusters.end());
  }
  EXPECT_GT(aux, 0u);
  for (const auto& r : planted_interest_report(reingest(data), c))
    if (r.purity) EXPECT_DOUBLE_EQ(*r.purity, 1.0);
}

TEST(Synth, FullNoiseMatchesUniformMembershipRate) {
  auto c = small();
  c.noise_rate = 1;
  const auto report = planted_interest_report(reingest(generate_dataset(c)), c);
  double hits = 0, total = 0;
  for (const auto& r : report) {
    hits += static_cast<double>(r.in_planted_clusters);
    total += static_cast<double>(r.auxiliary_events);
  }
  // two clusters of 25 items out of 500
  const double p = static_cast<double>(c.interests_per_user) / c.n_latent_interests;
  const double sigma = std::sqrt(p * (1 - p) / total);
  EXPECT_NEAR(hits / total, p, 3 * sigma);
}

TEST(Synth, HalfNoisePurityMatchesClosedForm) {
  auto c = small();
  c.noise_rate = 0.5;
  const auto report = planted_interest_report(reingest(generate_dataset(c)), c);
  double hits = 0, total = 0;
  for (const auto& r : report) {
    hits += static_cast<double>(r.in_planted_clusters);
    total += static_cast<double>(r.auxiliary_events);
  }
  const double share = static_cast<double>(c.interests_per_user) / c.n_latent_interests;
  const double p = (1 - c.noise_rate) + c.noise_rate * share;  // 0.55
  const double sigma = std::sqrt(p * (1 - p) / total);
  EXPECT_NEAR(hits / total, p, 3 * sigma);
}

TEST(Synth, AuxiliaryLengthFollowsMultiplier) {
  auto c = small(1000);
  c.min_seq_len = 10;
  c.max_seq_len = 10;
  c.aux_multiplier = 4;
  const auto data = generate_dataset(c);
  const auto log = reingest(data);
  const double aux_per_user_domain =
      static_cast<double>(log.count(Domain::X, Behavior::Auxiliary)) / c.n_users;
  EXPECT_GE(aux_per_user_domain, 36.0);
  EXPECT_LE(aux_per_user_domain, 44.0);
}

TEST(Synth, UsersWithoutAuxiliaryHaveNoPurity) {
  auto c = small(200);
  c.min_seq_len = 1;
  c.max_seq_len = 1;
  c.aux_multiplier = 1;
  const auto report = planted_interest_report(reingest(generate_dataset(c)), c);
  std::size_t empty = 0;
  for (const auto& r : report) {
    if (r.auxiliary_events == 0) {
      ++empty;
      EXPECT_FALSE(r.purity.has_value());
    } else {
      EXPECT_TRUE(r.purity.has_value());
    }
  }
  EXPECT_GT(empty, 0u);
}

TEST(Synth, PowerLawGivesLongTailMajority) {
  const auto c = small(2000);
  const auto histories = collect_histories(reingest(generate_dataset(c)));
  for (Domain d : kDomains) {
    std::vector<int> lengths;
    for (const auto& h : histories) lengths.push_back(h.target_length(d));
    const double threshold = compute_long_tail_threshold(lengths);
    const auto below = std::count_if(lengths.begin(), lengths.end(), [&](int n) { return n < threshold; });
    EXPECT_GE(static_cast<double>(below) / lengths.size(), 0.6) << name(d);
  }
}

TEST(Synth, SeedDeterminism) {
  const auto c = small(300);
  EXPECT_EQ(to_tsv(generate_dataset(c)), to_tsv(generate_dataset(c)));
  auto other = c;
  other.rng_seed += 1;
  EXPECT_NE(to_tsv(generate_dataset(c)), to_tsv(generate_dataset(other)));
}

TEST(Synth, IngestionRoundTrip) {
  const auto c = small(300);
  const auto data = generate_dataset(c);
  const auto log = reingest(data);
  EXPECT_EQ(log.events.size(), data.events.size());
  EXPECT_EQ(log.dropped_events, 0u);
  std::size_t by_kind = 0;
  for (Domain d : kDomains)
    for (Behavior b : {Behavior::Target, Behavior::Auxiliary}) by_kind += log.count(d, b);
  EXPECT_EQ(by_kind, data.events.size());
  const auto seqs = build_sequences(log, 20, 50);
  EXPECT_EQ(seqs.size(), static_cast<std::size_t>(c.n_users));
}

TEST(Synth, TimestampsIncreasePerUser) {
  const auto data = generate_dataset(small(50));
  for (std::size_t i = 1; i < data.events.size(); ++i)
    if (data.events[i].user_id == data.events[i - 1].user_id)
      EXPECT_GT(data.events[i].timestamp, data.events[i - 1].timestamp);
}

TEST(Synth, WritesLogAndGroundTruth) {
  const auto dir = std::filesystem::temp_directory_path() / "macd_test_synth";
  std::filesystem::create_directories(dir);
  const auto path = dir / "log.tsv";
  const auto c = small(20);
  const auto data = generate(c, path);
  std::ifstream in(path);
  std::stringstream text;
  text << in.rdbuf();
  EXPECT_EQ(text.str(), to_tsv(data));
  auto truth = path;
  truth += ".truth.json";
  EXPECT_TRUE(std::filesystem::exists(truth));
  std::filesystem::remove_all(dir);
}

TEST(Synth, RejectsDegenerateConfig) {
  auto c = small();
  c.n_users = 0;
  EXPECT_THROW(generate_dataset(c), std::invalid_argument);
  c = small();
  c.n_items_y = 0;
  EXPECT_THROW(generate_dataset(c), std::invalid_argument);
  c = small();
  c.noise_rate = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small();
  c.aux_multiplier = 0.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Synth, PurityReportRejectsForeignLog) {
  const auto c = small(20);
  std::istringstream in("stranger\tx00001\tX\ttarget\t1\n");
  const auto log = ingest_log(in, 1, "foreign");
  EXPECT_THROW(planted_interest_report(log, c), std::invalid_argument);
}

TEST(Synth, CrossDomainCorrelationSharesInterests) {
  auto c = small(500);
  c.cross_domain_interest_correlation = 1.0;
  for (const auto& u : generate_dataset(c).users) EXPECT_EQ(u.interests[0].clusters, u.interests[1].clusters);
  c.cross_domain_interest_correlation = 0.0;
  std::size_t same = 0;
  for (const auto& u : generate_dataset(c).users) same += u.interests[0].clusters == u.interests[1].clusters;
  EXPECT_LT(same, 50u);
}
