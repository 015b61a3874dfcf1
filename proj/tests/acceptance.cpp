// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion. Usage:
//   acceptance [--only 1,2,9] [--out-dir DIR]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fixtures.hpp"
#include "macd/attention.hpp"
#include "macd/checkpoint.hpp"
#include "macd/experiment.hpp"
#include "macd/irg.hpp"
#include "macd/metrics.hpp"
#include "macd/objective.hpp"
#include "macd/trainer.hpp"

using namespace macd;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradBudget = 60;
constexpr double kRowSumTolerance = 1e-6;
constexpr double kAttentionBudget = 30;
constexpr double kClosedFormTolerance = 1e-6;
constexpr double kFguLimitTolerance = 1e-9;
constexpr double kOverfitBce = 0.1;
constexpr double kOverfitBudget = 120;
constexpr double kDirectionalBudget = 15 * 60;
constexpr int kRepeats = 5;

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Matrix<double> random_matrix(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Matrix<double> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Mask random_mask(Index n, std::mt19937_64& rng) {
  Mask m(n);
  for (Index i = 0; i < n; ++i) m(i) = rng() % 3 != 0;
  return m;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto started = std::chrono::steady_clock::now();
  const auto r = gradient_check(gradcheck_config(), {1e-4, kGradTolerance, 1e-6, {}});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  Outcome o;
  o.pass = r.worst.rel_error < kGradTolerance && secs < kGradBudget;
  o.detail = std::to_string(r.scalars) + " scalars, worst " + r.worst.parameter + " rel error " +
             fmt("%.3g", r.worst.rel_error) + fmt(", %.2f s", secs);
  return o;
}

Outcome attention_invariants() {
  const auto started = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  double worst_sum = 0;
  long bad_padding = 0, bad_perturb = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int heads = 1 << (trial % 4);
    const int d = 8;
    const Index n = 1 + static_cast<Index>(rng() % 8), m = 1 + static_cast<Index>(rng() % 12);
    Mask keys = random_mask(m, rng);
    if (!keys.any()) keys(0) = true;
    const auto q = random_matrix(n, d, rng, 3.0);
    auto k = random_matrix(m, d, rng, 3.0);
    auto v = random_matrix(m, d, rng, 3.0);

    const auto r = scaled_dot_attention<double>(q, k, v, keys);
    for (Index i = 0; i < n; ++i) {
      worst_sum = std::max(worst_sum, std::abs(r.weights.row(i).sum() - 1.0));
      for (Index j = 0; j < m; ++j)
        if (!keys(j) && r.weights(i, j) != 0.0) ++bad_padding;
    }

    ParameterStore<double> store;
    InterestAttention<double> attn(store, "a", d, heads);
    attn.initialize(rng);
    const Mask queries = Mask::Constant(n, true);
    Tape<double> t;
    const Matrix<double> before = attn.attend(t, t.constant(q), queries, t.constant(k), keys).value();
    for (Index j = 0; j < m; ++j)
      if (!keys(j)) {
        k.row(j) = random_matrix(1, d, rng, 100.0);
        v.row(j) = random_matrix(1, d, rng, 100.0);
      }
    const Matrix<double> after = attn.attend(t, t.constant(q), queries, t.constant(k), keys).value();
    if (before != after) ++bad_perturb;
    if (scaled_dot_attention<double>(q, k, v, keys).output != scaled_dot_attention<double>(q, k, v, keys).output)
      ++bad_perturb;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  Outcome o;
  o.pass = worst_sum <= kRowSumTolerance && bad_padding == 0 && bad_perturb == 0 && secs < kAttentionBudget;
  o.detail = "max |row sum - 1| " + fmt("%.2g", worst_sum) + ", nonzero padded weights " +
             std::to_string(bad_padding) + ", perturbation changes " + std::to_string(bad_perturb) +
             fmt(", %.2f s", secs);
  return o;
}

Outcome contrastive_closed_form() {
  Outcome o;
  std::mt19937_64 rng(3);
  for (int n : {2, 3, 8}) {
    const RowVector<double> v = random_matrix(1, 6, rng);
    const Matrix<double> all = v.replicate(n, 1);
    const double got = contrastive_loss<double>(all, all, 1.0, ContrastiveDenominator::NegativesOnly);
    const double want = n * std::log(n - 1.0);
    const double with_positive = contrastive_loss<double>(all, all, 1.0);
    o.pass = o.pass && std::abs(got - want) <= kClosedFormTolerance;
    o.detail += "N=" + std::to_string(n) + ": " + fmt("%.6f", got) + " vs " + fmt("%.6f", want) +
                fmt(" (with positive in denominator %.6f); ", with_positive);
  }
  return o;
}

Outcome fgu_bounds() {
  Outcome o;
  std::mt19937_64 rng(4);
  const int d = 8;
  ParameterStore<double> store;
  FusionGate<double> gate(store, "fgu", d);
  gate.initialize(rng);
  for (int i = 1; i <= 4; ++i) gate.bias(i).value = random_matrix(1, d, rng);
  long outside = 0;
  for (int batch = 0; batch < 100; ++batch) {
    Tape<double> t;
    const auto r = gate.fuse(t, t.constant(random_matrix(100, d, rng, 3.0)), t.constant(random_matrix(100, d, rng, 3.0)),
                             t.constant(random_matrix(100, d, rng, 3.0)));
    for (const auto* g : {&r.gate1.value(), &r.gate2.value()})
      outside += (g->array() <= 0.0).count() + (g->array() >= 1.0).count();
    for (const auto* v : {&r.intermediate.value(), &r.fused.value()})
      outside += (v->array() <= -1.0).count() + (v->array() >= 1.0).count();
  }
  for (std::size_t i = 0; i < store.size(); ++i) store[i].value.setZero();
  const auto a = random_matrix(500, d, rng, 3.0), b = random_matrix(500, d, rng, 3.0);
  Tape<double> t;
  const auto r = gate.fuse(t, t.constant(a), t.constant(b), t.constant(random_matrix(500, d, rng, 3.0)));
  const Matrix<double> limit = ((a + b) / 2).array().tanh().matrix();
  const double err = (r.intermediate.value() - limit).cwiseAbs().maxCoeff();
  o.pass = outside == 0 && err <= kFguLimitTolerance;
  o.detail = "10000 rows, out-of-range entries " + std::to_string(outside) + ", zero-parameter limit error " +
             fmt("%.2g", err);
  return o;
}

std::vector<Index> brute_force_nearest(const Matrix<double>& source, const std::vector<bool>& cold) {
  std::vector<Index> out(cold.size(), -1);
  for (Index i = 0; i < source.rows(); ++i) {
    if (!cold[static_cast<std::size_t>(i)]) continue;
    double best = -2;
    for (Index j = 0; j < source.rows(); ++j) {
      if (j == i || cold[static_cast<std::size_t>(j)]) continue;
      const double na = source.row(i).norm(), nb = source.row(j).norm();
      const double c = (na > 0 && nb > 0) ? source.row(i).dot(source.row(j)) / (na * nb) : 0.0;
      if (c > best) {
        best = c;
        out[static_cast<std::size_t>(i)] = j;
      }
    }
  }
  return out;
}

Outcome irg_oracle() {
  std::mt19937_64 rng(5);
  long compared = 0, mismatched = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = 2 + static_cast<Index>(rng() % 63), d = 1 + static_cast<Index>(rng() % 8);
    IrgBatch<double> b;
    b.fused_x = random_matrix(n, d, rng);
    b.fused_y = random_matrix(n, d, rng);
    for (Index i = 0; i < n; ++i) {
      const auto r = rng() % 10;
      b.cold_start_x.push_back(r < 2);
      b.cold_start_y.push_back(r >= 2 && r < 4);
    }
    for (int k = 0; k < 2; ++k) {
      const Index a = static_cast<Index>(rng() % static_cast<std::uint64_t>(n));
      const Index c = static_cast<Index>(rng() % static_cast<std::uint64_t>(n));
      b.fused_y.row(c) = b.fused_y.row(a);
      b.fused_x.row(c) = b.fused_x.row(a);
    }
    for (Domain target : kDomains) {
      const auto r = irg_replace(b, target);
      const auto& cold = b.cold_start(target);
      const auto want = brute_force_nearest(b.fused(other(target)), cold);
      for (Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (!cold[k]) continue;
        ++compared;
        if (r.nearest[k] != want[k]) ++mismatched;
        else if (want[k] >= 0 && r.representations.row(i) != b.fused(target).row(want[k])) ++mismatched;
      }
    }
  }
  Outcome o;
  o.pass = mismatched == 0 && compared > 0;
  o.detail = std::to_string(compared) + " cold-start rows, " + std::to_string(mismatched) + " disagreements";
  return o;
}

Outcome metric_oracle() {
  std::mt19937_64 rng(6);
  long mismatched = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 40);
    RankingTask task;
    task.user_id = "t" + std::to_string(trial);
    for (int i = 0; i < n; ++i) task.scores.push_back(static_cast<double>(rng() % 10));
    std::vector<std::pair<double, int>> order;
    for (int i = 0; i < n; ++i) order.emplace_back(task.scores[static_cast<std::size_t>(i)], i == 0 ? 1 : 0);
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    double ndcg = 0;
    int hit = 0;
    for (int pos = 0; pos < std::min(10, n); ++pos)
      if (order[static_cast<std::size_t>(pos)].second == 1) {
        ndcg = 1.0 / std::log2(pos + 2.0);
        hit = 1;
      }
    const auto got = rank_and_score(task, 10);
    if (got.ndcg != ndcg || got.hit != hit) ++mismatched;
  }
  std::uniform_real_distribution<double> u(0, 1);
  double hits = 0;
  const int tasks = 5000;
  for (int i = 0; i < tasks; ++i) {
    RankingTask task;
    task.user_id = "r";
    task.scores.resize(1000);
    for (auto& s : task.scores) s = u(rng);
    hits += rank_and_score(task, 10).hit;
  }
  const double hr = hits / tasks, sigma = std::sqrt(0.01 * 0.99 / tasks);
  Outcome o;
  o.pass = mismatched == 0 && std::abs(hr - 0.01) <= 3 * sigma;
  o.detail = "sort-oracle disagreements " + std::to_string(mismatched) + ", random HR@10 " + fmt("%.4f", hr) +
             fmt(" (0.01 ± %.4f)", 3 * sigma);
  return o;
}

Outcome data_pipeline() {
  Outcome o;
  const double threshold = compute_long_tail_threshold({50, 40, 30, 20, 10, 9, 8, 7, 6, 5});
  std::array<DomainVocab, 2> vocabs{DomainVocab(Domain::X), DomainVocab(Domain::Y)};
  for (int i = 1; i <= 5; ++i) {
    vocabs[0].add("x" + std::to_string(i));
    vocabs[1].add("y" + std::to_string(i));
  }
  std::vector<UserHistory> users;
  for (int u = 0; u < 28771; ++u) {
    UserHistory h;
    h.user_id = "u" + std::to_string(u);
    std::int64_t ts = 0;
    for (int k = 0; k < 1 + u % 3; ++k) h.stream(Domain::X, Behavior::Target).push_back({1 + k, ++ts});
    for (int k = 0; k < 1 + (u / 3) % 3; ++k) h.stream(Domain::Y, Behavior::Target).push_back({1 + k, ++ts});
    users.push_back(std::move(h));
  }
  ScenarioOptions so;
  so.overlap_ratio = 0.25;
  const auto s = make_scenario(users, vocabs, so);
  const auto overlapping = std::count_if(s.flags.begin(), s.flags.end(), [](const UserFlags& f) { return f.overlapping; });

  std::istringstream in(to_tsv(generate_dataset(fixtures::reference_synth())));
  const auto log = ingest_log(in, 1, "synthetic");
  const auto histories = collect_histories(log);
  const auto a = serialize_scenario(make_scenario(histories, log.vocabs, fixtures::reference_options()));
  const auto b = serialize_scenario(make_scenario(histories, log.vocabs, fixtures::reference_options()));
  auto shifted = fixtures::reference_options();
  shifted.seed = 1;
  const auto c = serialize_scenario(make_scenario(histories, log.vocabs, shifted));

  o.pass = threshold == 45.0 && overlapping == 7192 && a == b && a != c;
  o.detail = "threshold " + fmt("%.1f", threshold) + ", overlapping users " + std::to_string(overlapping) +
             " of 28771, reruns " + (a == b ? "byte-identical" : "differ") + ", other seed " +
             (a != c ? "differs" : "identical");
  return o;
}

Outcome overfit() {
  const auto started = std::chrono::steady_clock::now();
  const auto scenario = fixtures::memorization_scenario();
  const auto result = train(fixtures::memorization_config(), scenario, {false, {}});
  const double bce = training_bce(*result.model, scenario);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  Outcome o;
  o.pass = bce < kOverfitBce && secs < kOverfitBudget;
  o.detail = "training BCE " + fmt("%.4f", bce) + " after " + std::to_string(result.log.size()) +
             " epochs (first epoch " + fmt("%.4f", result.log.front().bce_per_pair) + ")" + fmt(", %.2f s", secs);
  return o;
}

// ---------------------------------------------------------------------------
// Desk-scale experiments on the reference scenario

ExperimentSpec reference_spec() {
  ExperimentSpec spec;
  spec.name = "reference";
  spec.base = desk_preset();
  spec.base.backbone = EncoderKind::SelfAttentive;
  spec.data.synth = fixtures::reference_synth();
  spec.scenario = fixtures::reference_options();
  spec.seeds.clear();
  for (int s = 1; s <= kRepeats; ++s) spec.seeds.push_back(static_cast<std::uint64_t>(s));
  return spec;
}

void progress(const std::string& m) { std::cerr << "  " << m << "\n" << std::flush; }

double cold_start_ndcg(const RankingReport& r) {
  // user-weighted over both domains, averaged over repeats
  double total = 0;
  for (const auto& run : r.runs) {
    double num = 0, den = 0;
    for (Domain d : kDomains) {
      const auto& c = run.cell(d, Subgroup::ColdStart);
      num += c.ndcg * static_cast<double>(c.n_users);
      den += static_cast<double>(c.n_users);
    }
    total += den > 0 ? num / den : 0.0;
  }
  return r.runs.empty() ? 0.0 : total / static_cast<double>(r.runs.size());
}

Outcome directional(ModelCache& cache) {
  const auto started = std::chrono::steady_clock::now();
  auto spec = reference_spec();
  spec.axes.push_back({"architecture", {"macd", "aux_concat"}});
  spec.axes.push_back({"irg", {"true", "false"}});
  const auto result = run_experiment(spec, &cache, progress);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  Outcome o;
  for (const auto& c : result.cells)
    if (!c.error.empty()) {
      o.pass = false;
      o.detail += "cell failed: " + c.error + "; ";
    }
  if (!o.pass) return o;
  const auto* macd = result.find({{"architecture", "macd"}, {"irg", "true"}});
  const auto* macd_no_irg = result.find({{"architecture", "macd"}, {"irg", "false"}});
  const auto* concat = result.find({{"architecture", "aux_concat"}, {"irg", "false"}});
  const double a = macd->report.headline_ndcg(), b = concat->report.headline_ndcg();
  const double cs_on = cold_start_ndcg(macd->report), cs_off = cold_start_ndcg(macd_no_irg->report);
  std::size_t cold_users = 0;
  for (const auto& run : macd->report.runs)
    for (Domain d : kDomains) cold_users += run.cell(d, Subgroup::ColdStart).n_users;
  const bool a_ok = a > b, b_ok = cs_on > cs_off;
  o.pass = a_ok && b_ok && secs < kDirectionalBudget;
  o.detail = std::string("(a) ") + (a_ok ? "ok" : "FAILED") + " MACD " + fmt("%.4f", a) + " vs aux_concat " +
             fmt("%.4f", b) + fmt(" (margin %+.4f; ", a - b) + "X " +
             fmt("%.4f", macd->report.mean(Domain::X, Subgroup::All, true)) + "/" +
             fmt("%.4f", concat->report.mean(Domain::X, Subgroup::All, true)) + ", Y " +
             fmt("%.4f", macd->report.mean(Domain::Y, Subgroup::All, true)) + "/" +
             fmt("%.4f", concat->report.mean(Domain::Y, Subgroup::All, true)) + "); (b) " + (b_ok ? "ok" : "FAILED") +
             " cold-start IRG on " + fmt("%.4f", cs_on) + " vs off " + fmt("%.4f", cs_off) +
             fmt(" (margin %+.4f, ", cs_on - cs_off) + std::to_string(cold_users) + " cold-start tasks)" +
             fmt("; %.0f s", secs);
  return o;
}

Outcome ablation(ModelCache& cache, const fs::path& out_dir) {
  auto spec = reference_spec();
  spec.ablation = true;
  const auto result = run_experiment(spec, &cache, progress);
  const auto csv = experiment_csv(result);
  std::ofstream(out_dir / "ablation.csv") << csv;

  Outcome o;
  std::size_t metric_columns = 0;
  {
    const std::string header = csv.substr(0, csv.find('\n'));
    for (Domain d : kDomains)
      for (const char* m : {"ndcg10", "hr10"})
        if (header.find(std::string(name(d)) + "_" + m + "_mean") != std::string::npos) ++metric_columns;
  }
  const bool shape = result.cells.size() == ablation_variants().size() && metric_columns == 4;
  o.pass = shape;
  const auto* full = result.find({{"variant", "full"}});
  if (!full || !full->error.empty()) {
    o.pass = false;
    o.detail = "full model failed";
    return o;
  }
  const double ref = full->report.headline_ndcg();
  o.detail = std::to_string(result.cells.size()) + " variants x 2 domains x 2 metrics; full " + fmt("%.4f", ref);
  for (const auto& c : result.cells) {
    if (c.settings[0].second == "full") continue;
    if (!c.error.empty()) {
      o.pass = false;
      o.detail += "; " + c.settings[0].second + " failed: " + c.error;
      continue;
    }
    const double v = c.report.headline_ndcg();
    const bool ok = ref >= v;
    o.pass = o.pass && ok;
    o.detail += "; " + c.settings[0].second + " " + fmt("%.4f", v) + (ok ? "" : " (above full)");
  }
  o.detail += "; csv " + (out_dir / "ablation.csv").string();
  return o;
}

Outcome checkpoint_round_trip(const fs::path& out_dir) {
  SynthConfig synth = fixtures::reference_synth();
  synth.n_users = 400;
  std::istringstream in(to_tsv(generate_dataset(synth)));
  const auto log = ingest_log(in, 1, "synthetic");
  const auto scenario = make_scenario(collect_histories(log), log.vocabs, fixtures::reference_options());
  auto cfg = desk_preset();
  cfg.epochs = 3;
  const auto result = train(cfg, scenario);
  const auto path = out_dir / "round_trip.ckpt";
  save_checkpoint(path, *result.model, result.best_epoch, result.adam_steps);
  const auto loaded =
      load_checkpoint(path, cfg, scenario.vocab(Domain::X).size(), scenario.vocab(Domain::Y).size());
  RankingReport a{10, {}}, b{10, {}};
  for (std::uint64_t s = 1; s <= 2; ++s) {
    a.runs.push_back(evaluate_model(*result.model, scenario, Partition::Test, s));
    b.runs.push_back(evaluate_model(*loaded, scenario, Partition::Test, s));
  }
  bool params = true;
  const auto& pa = result.model->parameters();
  const auto& pb = loaded->parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) params = params && pa[i].value == pb[i].value;
  Outcome o;
  o.pass = params && report_csv(a) == report_csv(b) && report_json(a) == report_json(b);
  o.detail = std::string("parameters ") + (params ? "bit-identical" : "differ") + ", report " +
             (report_csv(a) == report_csv(b) ? "bit-identical" : "differs") + fmt(" (X NDCG@10 %.4f)", a.mean(Domain::X, Subgroup::All, true));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  app.set_help_flag("--help");
  std::vector<int> only;
  std::string out_dir = "acceptance_out";
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--out-dir", out_dir, "where the ablation CSV and checkpoint go");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(out_dir);

  ModelCache cache;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"attention invariants", attention_invariants},
      {"contrastive closed form", contrastive_closed_form},
      {"fusion gate bounds and limits", fgu_bounds},
      {"IRG oracle equivalence", irg_oracle},
      {"metric oracle", metric_oracle},
      {"data pipeline exactness", data_pipeline},
      {"overfit smoke test", overfit},
      {"directional synthetic experiment", [&] { return directional(cache); }},
      {"ablation shape", [&] { return ablation(cache, out_dir); }},
      {"checkpoint round trip", [&] { return checkpoint_round_trip(out_dir); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto started = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (!o.pass) ++failures;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << " - "
              << o.detail << fmt(" [%.1f s]", secs) << "\n"
              << std::flush;
  }
  return failures == 0 ? 0 : 1;
}
