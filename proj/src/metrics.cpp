// SPDX-License-Identifier: Apache-2.0
#include "macd/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"
#include "macd/config.hpp"

namespace macd {

RankOutcome rank_and_score(const RankingTask& task, int k) {
  if (k < 1) throw std::invalid_argument("rank_and_score: k must be >= 1");
  if (task.scores.empty()) throw std::invalid_argument("rank_and_score: no scores for user " + task.user_id);
  for (double s : task.scores)
    if (!std::isfinite(s)) throw std::invalid_argument("rank_and_score: non-finite score for user " + task.user_id);
  const double label = task.scores.front();
  RankOutcome r;
  r.rank = 1 + static_cast<int>(std::count_if(task.scores.begin() + 1, task.scores.end(),
                                              [label](double s) { return s >= label; }));
  if (r.rank <= k) {
    r.hit = 1;
    r.ndcg = 1.0 / std::log2(static_cast<double>(r.rank) + 1.0);
  }
  return r;
}

std::string_view name(Subgroup g) {
  switch (g) {
    case Subgroup::All: return "all";
    case Subgroup::Head: return "head";
    case Subgroup::LongTail: return "long_tail";
    case Subgroup::ColdStart: return "cold_start";
  }
  return "?";
}

double SeedReport::headline_ndcg() const {
  return 0.5 * (cell(Domain::X, Subgroup::All).ndcg + cell(Domain::Y, Subgroup::All).ndcg);
}

double RankingReport::mean(Domain d, Subgroup g, bool ndcg) const {
  if (runs.empty()) return 0;
  double total = 0;
  for (const auto& r : runs) total += ndcg ? r.cell(d, g).ndcg : r.cell(d, g).hr;
  return total / static_cast<double>(runs.size());
}

double RankingReport::stddev(Domain d, Subgroup g, bool ndcg) const {
  if (runs.size() < 2) return 0;
  const double m = mean(d, g, ndcg);
  double ss = 0;
  for (const auto& r : runs) {
    const double v = ndcg ? r.cell(d, g).ndcg : r.cell(d, g).hr;
    ss += (v - m) * (v - m);
  }
  return std::sqrt(ss / static_cast<double>(runs.size() - 1));
}

double RankingReport::headline_ndcg() const {
  return 0.5 * (mean(Domain::X, Subgroup::All, true) + mean(Domain::Y, Subgroup::All, true));
}

std::vector<int> sample_negatives(int vocab_size, const std::vector<TimedItem>& history,
                                  const std::vector<TimedItem>& auxiliary, int count, std::uint64_t seed) {
  std::vector<char> excluded(static_cast<std::size_t>(vocab_size) + 1, 0);
  excluded[0] = 1;
  for (const auto& e : history) excluded[static_cast<std::size_t>(e.item)] = 1;
  for (const auto& e : auxiliary) excluded[static_cast<std::size_t>(e.item)] = 1;
  const auto available = static_cast<int>(std::count(excluded.begin(), excluded.end(), 0));
  if (available < count)
    throw DataError("cannot sample " + std::to_string(count) + " negatives: only " + std::to_string(available) +
                    " items lie outside the user's history");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(1, vocab_size);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  if (available < 2 * count) {
    std::vector<int> pool;
    for (int i = 1; i <= vocab_size; ++i)
      if (!excluded[static_cast<std::size_t>(i)]) pool.push_back(i);
    std::shuffle(pool.begin(), pool.end(), rng);
    out.assign(pool.begin(), pool.begin() + count);
    return out;
  }
  while (static_cast<int>(out.size()) < count) {
    const int item = pick(rng);
    if (excluded[static_cast<std::size_t>(item)]) continue;
    excluded[static_cast<std::size_t>(item)] = 1;
    out.push_back(item);
  }
  return out;
}

std::vector<RankingTask> build_ranking_tasks(const Scenario& scenario, Partition split, int negatives,
                                             std::uint64_t seed, std::size_t* skipped) {
  std::vector<RankingTask> tasks;
  std::size_t skip = 0;
  for (auto u : scenario.members(split)) {
    const auto& h = scenario.users[u];
    if (!h.active(Domain::X) && !h.active(Domain::Y)) {
      ++skip;
      continue;
    }
    for (Domain d : kDomains) {
      if (!h.active(d)) continue;
      RankingTask t;
      t.user = u;
      t.user_id = h.user_id;
      t.domain = d;
      t.label_item = h.stream(d, Behavior::Target).back().item;
      t.negative_items =
          sample_negatives(scenario.vocab(d).size(), h.stream(d, Behavior::Target), h.stream(d, Behavior::Auxiliary),
                           negatives, derive_seed(seed, "eval-negatives", u * 2 + static_cast<std::uint64_t>(idx(d))));
      tasks.push_back(std::move(t));
    }
  }
  if (skipped) *skipped = skip;
  return tasks;
}

SeedReport summarize(const Scenario& scenario, const std::vector<RankingTask>& tasks, std::uint64_t seed, int k) {
  SeedReport r;
  r.seed = seed;
  std::array<std::array<double, 4>, 2> ndcg{}, hit{};
  for (const auto& t : tasks) {
    const auto out = rank_and_score(t, k);
    const auto di = static_cast<std::size_t>(idx(t.domain));
    const auto& f = scenario.flags[t.user];
    std::vector<Subgroup> groups{Subgroup::All, f.long_tail[di] ? Subgroup::LongTail : Subgroup::Head};
    if (f.cold_start[di]) groups.push_back(Subgroup::ColdStart);
    for (Subgroup g : groups) {
      const auto gi = static_cast<std::size_t>(g);
      ndcg[di][gi] += out.ndcg;
      hit[di][gi] += out.hit;
      ++r.cells[di][gi].n_users;
    }
  }
  for (std::size_t di = 0; di < 2; ++di)
    for (std::size_t gi = 0; gi < 4; ++gi) {
      auto& c = r.cells[di][gi];
      if (c.n_users == 0) continue;
      c.ndcg = ndcg[di][gi] / static_cast<double>(c.n_users);
      c.hr = hit[di][gi] / static_cast<double>(c.n_users);
    }
  return r;
}

SeedReport evaluate_split(CandidateScorer& scorer, const Scenario& scenario, Partition split, int negatives,
                          std::uint64_t seed, int k) {
  std::size_t skipped = 0;
  auto tasks = build_ranking_tasks(scenario, split, negatives, seed, &skipped);
  scorer.score(scenario, tasks);
  auto r = summarize(scenario, tasks, seed, k);
  r.skipped_users = skipped;
  r.irg_fallbacks = scorer.fallbacks();
  return r;
}

namespace {

std::string format_value(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace

std::string report_csv(const RankingReport& r) {
  std::string out = "domain,subgroup,metric,seed,value,n_users\n";
  const std::string ndcg_name = "ndcg@" + std::to_string(r.k);
  const std::string hr_name = "hr@" + std::to_string(r.k);
  for (const auto& run : r.runs)
    for (Domain d : kDomains)
      for (Subgroup g : kSubgroups) {
        const auto& c = run.cell(d, g);
        const std::string prefix = std::string(name(d)) + "," + std::string(name(g)) + ",";
        const std::string suffix = "," + std::to_string(run.seed) + ",";
        out += prefix + ndcg_name + suffix + format_value(c.ndcg) + "," + std::to_string(c.n_users) + "\n";
        out += prefix + hr_name + suffix + format_value(c.hr) + "," + std::to_string(c.n_users) + "\n";
      }
  return out;
}

std::string report_json(const RankingReport& r) {
  nlohmann::ordered_json j;
  j["k"] = r.k;
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  for (const auto& run : r.runs) {
    nlohmann::ordered_json jr;
    jr["seed"] = run.seed;
    jr["skipped_users"] = run.skipped_users;
    jr["irg_fallbacks"] = run.irg_fallbacks;
    for (Domain d : kDomains)
      for (Subgroup g : kSubgroups) {
        const auto& c = run.cell(d, g);
        jr["cells"][std::string(name(d))][std::string(name(g))] = {
            {"ndcg", c.ndcg}, {"hr", c.hr}, {"n_users", c.n_users}};
      }
    runs.push_back(std::move(jr));
  }
  j["runs"] = std::move(runs);
  for (Domain d : kDomains)
    for (Subgroup g : kSubgroups)
      j["summary"][std::string(name(d))][std::string(name(g))] = {{"ndcg_mean", r.mean(d, g, true)},
                                                                  {"ndcg_std", r.stddev(d, g, true)},
                                                                  {"hr_mean", r.mean(d, g, false)},
                                                                  {"hr_std", r.stddev(d, g, false)}};
  return j.dump(2) + "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace macd
