// SPDX-License-Identifier: Apache-2.0
//
// Sampled-candidate ranking evaluation: one held-out item against sampled
// negatives, NDCG@k and HR@k per domain and user subgroup.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "macd/data.hpp"

namespace macd {

struct RankingTask {
  std::size_t user = 0;  // index into Scenario::users
  std::string user_id;
  Domain domain = Domain::X;
  int label_item = 0;
  std::vector<int> negative_items;
  std::vector<double> scores;  // label first, then negatives in order
};

struct RankOutcome {
  int rank = 0;
  double ndcg = 0;
  int hit = 0;
};

/// rank = 1 + #negatives scoring at least as high as the label (ties count
/// against the label). Throws on a non-finite score.
RankOutcome rank_and_score(const RankingTask& task, int k = 10);

enum class Subgroup : int { All = 0, Head = 1, LongTail = 2, ColdStart = 3 };
inline constexpr std::array<Subgroup, 4> kSubgroups{Subgroup::All, Subgroup::Head, Subgroup::LongTail,
                                                   Subgroup::ColdStart};
std::string_view name(Subgroup g);

struct MetricCell {
  double ndcg = 0;
  double hr = 0;
  std::size_t n_users = 0;
};

/// One evaluation pass (single seed).
struct SeedReport {
  std::uint64_t seed = 0;
  std::array<std::array<MetricCell, 4>, 2> cells{};  // [domain][subgroup]
  std::size_t skipped_users = 0;
  std::size_t irg_fallbacks = 0;

  const MetricCell& cell(Domain d, Subgroup g) const {
    return cells[static_cast<std::size_t>(idx(d))][static_cast<std::size_t>(g)];
  }
  /// Mean over domains of the all-user NDCG.
  double headline_ndcg() const;
};

struct RankingReport {
  int k = 10;
  std::vector<SeedReport> runs;

  double mean(Domain d, Subgroup g, bool ndcg) const;
  double stddev(Domain d, Subgroup g, bool ndcg) const;
  double headline_ndcg() const;
};

/// Fills RankingTask::scores. Implementations may batch users internally.
class CandidateScorer {
 public:
  virtual ~CandidateScorer() = default;
  virtual void score(const Scenario& scenario, std::vector<RankingTask>& tasks) = 0;
  /// Cold-start users left without a donor during the last score() call.
  virtual std::size_t fallbacks() const { return 0; }
};

/// `count` distinct items in [1, vocab_size] outside both streams, uniform.
/// Throws DataError when fewer than `count` such items exist.
std::vector<int> sample_negatives(int vocab_size, const std::vector<TimedItem>& history,
                                  const std::vector<TimedItem>& auxiliary, int count, std::uint64_t seed);

/// One task per (user in `split`, domain with a held-out target item).
/// Negatives avoid every item in the user's history of that domain and are
/// drawn from a per-(seed, user, domain) stream.
std::vector<RankingTask> build_ranking_tasks(const Scenario& scenario, Partition split, int negatives,
                                             std::uint64_t seed, std::size_t* skipped = nullptr);

SeedReport evaluate_split(CandidateScorer& scorer, const Scenario& scenario, Partition split, int negatives,
                          std::uint64_t seed, int k = 10);

/// Aggregates scored tasks into subgroup cells.
SeedReport summarize(const Scenario& scenario, const std::vector<RankingTask>& tasks, std::uint64_t seed, int k);

/// `domain,subgroup,metric,seed,value,n_users` rows.
std::string report_csv(const RankingReport& r);
std::string report_json(const RankingReport& r);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace macd
