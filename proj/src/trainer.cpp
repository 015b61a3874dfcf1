// SPDX-License-Identifier: Apache-2.0
#include "macd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "macd/irg.hpp"

namespace macd {

TrainExample make_train_example(const Scenario& scenario, std::size_t user, const TrainConfig& config,
                                std::mt19937_64& rng) {
  const auto& h = scenario.users[user];
  TrainExample ex;
  ViewCut cut;
  for (Domain d : kDomains) {
    const auto k = static_cast<std::size_t>(idx(d));
    const int n = h.target_length(d);
    if (n == 0) continue;
    int pos = n - 1;
    if (config.train_cutoff == TrainCutoff::Random && n >= 2) pos = std::uniform_int_distribution<int>(1, n - 1)(rng);
    cut.label[k] = pos;
    ex.label[k] = h.stream(d, Behavior::Target)[static_cast<std::size_t>(pos)].item;
    ex.negatives[k] = sample_negatives(scenario.vocab(d).size(), h.stream(d, Behavior::Target),
                                       h.stream(d, Behavior::Auxiliary), config.negatives_per_positive, rng());
  }
  ex.view = make_view(h, cut, config.T, config.T_prime);
  return ex;
}

double training_bce(const Model& model, const Scenario& scenario) {
  const auto& cfg = model.config();
  std::vector<TrainExample> batch;
  double bce = 0, pairs = 0;
  const auto flush = [&] {
    if (batch.empty()) return;
    Tape<double> tape;
    const auto loss = model.batch_loss(tape, batch);
    bce += loss.breakdown.l_cls_x + loss.breakdown.l_cls_y;
    pairs += loss.pairs[0] + loss.pairs[1];
    batch.clear();
  };
  for (auto u : scenario.members(Partition::Train)) {
    const auto& h = scenario.users[u];
    TrainExample ex;
    ViewCut cut;
    for (Domain d : kDomains) {
      const auto k = static_cast<std::size_t>(idx(d));
      const int n = h.target_length(d);
      if (n == 0) continue;
      cut.label[k] = n - 1;
      ex.label[k] = h.stream(d, Behavior::Target).back().item;
      std::vector<bool> seen(static_cast<std::size_t>(scenario.vocab(d).size()) + 1, false);
      for (Behavior b : {Behavior::Target, Behavior::Auxiliary})
        for (const auto& e : h.stream(d, b)) seen[static_cast<std::size_t>(e.item)] = true;
      for (int i = 1; i <= scenario.vocab(d).size(); ++i)
        if (!seen[static_cast<std::size_t>(i)]) ex.negatives[k].push_back(i);
    }
    ex.view = make_view(h, cut, cfg.T, cfg.T_prime);
    batch.push_back(std::move(ex));
    if (static_cast<int>(batch.size()) == cfg.eval_batch_size) flush();
  }
  flush();
  return pairs > 0 ? bce / pairs : 0.0;
}

namespace {

struct Snapshot {
  std::vector<Matrix<double>> values, first, second;
  long steps = 0;
};

Snapshot take_snapshot(const ParameterStore<double>& store, long steps) {
  Snapshot s;
  s.steps = steps;
  for (std::size_t i = 0; i < store.size(); ++i) {
    s.values.push_back(store[i].value);
    s.first.push_back(store[i].first_moment);
    s.second.push_back(store[i].second_moment);
  }
  return s;
}

void restore_snapshot(ParameterStore<double>& store, const Snapshot& s) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    store[i].value = s.values[i];
    store[i].first_moment = s.first[i];
    store[i].second_moment = s.second[i];
  }
}

std::string describe_batch(const Scenario& scenario, const std::vector<std::size_t>& users,
                           const LossBreakdown& b, int epoch) {
  std::ostringstream out;
  out << "non-finite loss in epoch " << epoch << " (cl_x=" << b.l_cl_x << " cl_y=" << b.l_cl_y
      << " cls_x=" << b.l_cls_x << " cls_y=" << b.l_cls_y << " total=" << b.total << "); batch users:";
  for (auto u : users) out << ' ' << scenario.users[u].user_id;
  return out.str();
}

}  // namespace

SeedReport evaluate_model(const Model& model, const Scenario& scenario, Partition split, std::uint64_t seed) {
  ModelScorer scorer(model);
  return evaluate_split(scorer, scenario, split, model.config().eval_negatives, seed);
}

TrainResult train(const TrainConfig& config, const Scenario& scenario, const TrainOptions& options) {
  config.validate();
  TrainResult result;
  result.model = std::make_unique<Model>(config, scenario.vocab(Domain::X).size(), scenario.vocab(Domain::Y).size(),
                                         derive_seed(config.rng_seed, "init"));
  Model& model = *result.model;
  auto& store = model.parameters();
  Adam<double> adam(AdamOptions{config.learning_rate, 0.9, 0.999, 1e-8});

  const auto train_users = scenario.members(Partition::Train);
  if (train_users.empty()) throw std::invalid_argument("scenario has no training users");
  const bool validate = options.validate && !scenario.members(Partition::Val).empty();

  Snapshot best;
  result.best_val_ndcg = -std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::mt19937_64 rng(derive_seed(config.rng_seed, "epoch", static_cast<std::uint64_t>(epoch)));
    auto order = train_users;
    std::shuffle(order.begin(), order.end(), rng);

    EpochLog log;
    log.epoch = epoch;
    double pairs = 0, bce_total = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<std::size_t> users(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<TrainExample> batch;
      batch.reserve(users.size());
      for (auto u : users) batch.push_back(make_train_example(scenario, u, config, rng));

      Tape<double> tape;
      auto loss = model.batch_loss(tape, batch);
      if (!std::isfinite(loss.breakdown.total) || !std::isfinite(loss.total.value()(0, 0)))
        throw DivergenceError(describe_batch(scenario, users, loss.breakdown, epoch));
      store.zero_grad();
      tape.backward(loss.total);
      adam.step(store);

      log.loss.l_cl_x += loss.breakdown.l_cl_x;
      log.loss.l_cl_y += loss.breakdown.l_cl_y;
      log.loss.l_cls_x += loss.breakdown.l_cls_x;
      log.loss.l_cls_y += loss.breakdown.l_cls_y;
      log.loss.total += loss.breakdown.total;
      bce_total += loss.breakdown.l_cls_x + loss.breakdown.l_cls_y;
      pairs += loss.pairs[0] + loss.pairs[1];
      ++batches;
    }
    const double nb = static_cast<double>(batches);
    log.loss.l_cl_x /= nb;
    log.loss.l_cl_y /= nb;
    log.loss.l_cls_x /= nb;
    log.loss.l_cls_y /= nb;
    log.loss.total /= nb;
    log.loss.lambda = config.effective_lambda();
    log.bce_per_pair = pairs > 0 ? bce_total / pairs : 0.0;

    log.val_ndcg = std::numeric_limits<double>::quiet_NaN();
    bool improved = true;
    if (validate) {
      log.val_ndcg =
          evaluate_model(model, scenario, Partition::Val, derive_seed(config.rng_seed, "validation")).headline_ndcg();
      improved = log.val_ndcg > result.best_val_ndcg;
    }
    if (improved) {
      result.best_val_ndcg = validate ? log.val_ndcg : std::numeric_limits<double>::quiet_NaN();
      result.best_epoch = epoch;
      best = take_snapshot(store, adam.steps());
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
  }
  restore_snapshot(store, best);
  result.adam_steps = best.steps;
  return result;
}

// ---------------------------------------------------------------------------

void ModelScorer::build_catalog(const Scenario& scenario) {
  const auto& cfg = model_.config();
  std::vector<UserView> views;
  for (auto u : scenario.members(Partition::Train)) {
    const auto& h = scenario.users[u];
    if (!h.active(Domain::X) || !h.active(Domain::Y)) continue;
    views.push_back(make_view(h, ViewCut{}, cfg.T, cfg.T_prime));
  }
  catalog_ = {Matrix<double>(0, cfg.d), Matrix<double>(0, cfg.d)};
  for (std::size_t start = 0; start < views.size(); start += static_cast<std::size_t>(cfg.eval_batch_size)) {
    const std::size_t end = std::min(views.size(), start + static_cast<std::size_t>(cfg.eval_batch_size));
    std::vector<const UserView*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&views[i]);
    const auto f = model_.fused(ptrs);
    for (std::size_t k = 0; k < 2; ++k) {
      Matrix<double> grown(catalog_[k].rows() + f[k].rows(), cfg.d);
      grown << catalog_[k], f[k];
      catalog_[k] = std::move(grown);
    }
  }
  catalog_ready_ = true;
}

void ModelScorer::score(const Scenario& scenario, std::vector<RankingTask>& tasks) {
  const auto& cfg = model_.config();
  fallbacks_ = 0;
  std::vector<std::size_t> users;
  std::map<std::size_t, std::size_t> position;
  for (const auto& t : tasks)
    if (position.emplace(t.user, users.size()).second) users.push_back(t.user);
  std::vector<std::vector<std::size_t>> tasks_of(users.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) tasks_of[position[tasks[i].user]].push_back(i);

  if (cfg.irg && cfg.irg_scope == IrgScope::Catalog && !catalog_ready_) build_catalog(scenario);

  for (std::size_t start = 0; start < users.size(); start += static_cast<std::size_t>(cfg.eval_batch_size)) {
    const std::size_t end = std::min(users.size(), start + static_cast<std::size_t>(cfg.eval_batch_size));
    const std::size_t n = end - start;
    std::vector<UserView> views;
    views.reserve(n);
    for (std::size_t i = start; i < end; ++i) {
      const auto u = users[i];
      views.push_back(make_view(scenario.users[u], evaluation_cut(scenario.users[u], scenario.flags[u]), cfg.T,
                                cfg.T_prime));
    }
    std::vector<const UserView*> ptrs;
    for (const auto& v : views) ptrs.push_back(&v);
    auto fused = model_.fused(ptrs);

    if (cfg.irg) {
      IrgBatch<double> batch;
      batch.fused_x = fused[0];
      batch.fused_y = fused[1];
      for (std::size_t i = start; i < end; ++i) {
        const auto& f = scenario.flags[users[i]];
        batch.cold_start_x.push_back(f.cold_start[0]);
        batch.cold_start_y.push_back(f.cold_start[1]);
        batch.observed_x.push_back(views[i - start].observed(Domain::X));
        batch.observed_y.push_back(views[i - start].observed(Domain::Y));
      }
      std::array<Matrix<double>, 2> replaced = fused;
      for (Domain d : kDomains) {
        const auto k = static_cast<std::size_t>(idx(d));
        const auto& cold = batch.cold_start(d);
        const auto n_cold = static_cast<std::size_t>(std::count(cold.begin(), cold.end(), true));
        if (n_cold == 0) continue;
        if (cfg.irg_scope == IrgScope::Catalog) {
          const auto r = irg_replace_from_catalog<double>(fused[1 - k], fused[k], cold, catalog_[1 - k], catalog_[k]);
          replaced[k] = r.representations;
          fallbacks_ += static_cast<std::size_t>(r.fallbacks);
        } else if (n < 2) {
          fallbacks_ += n_cold;
        } else {
          const auto r = irg_replace(batch, d);
          replaced[k] = r.representations;
          fallbacks_ += static_cast<std::size_t>(r.fallbacks);
        }
      }
      fused = std::move(replaced);
    }

    for (std::size_t i = start; i < end; ++i) {
      for (auto ti : tasks_of[i]) {
        auto& task = tasks[ti];
        const auto k = static_cast<std::size_t>(idx(task.domain));
        IndexSequence candidates;
        candidates.reserve(task.negative_items.size() + 1);
        candidates.push_back(task.label_item);
        candidates.insert(candidates.end(), task.negative_items.begin(), task.negative_items.end());
        const auto s = model_.score(task.domain, fused[k].row(static_cast<Index>(i - start)), candidates);
        task.scores.assign(s.data(), s.data() + s.size());
      }
    }
  }
}

// ---------------------------------------------------------------------------

TrainConfig gradcheck_config() {
  TrainConfig c;
  c.d = 4;
  c.T = 3;
  c.T_prime = 5;
  c.h = 2;
  c.lambda = 0.5;
  c.batch_size = 3;
  c.backbone = EncoderKind::SelfAttentive;
  return c;
}

std::vector<TrainExample> gradcheck_batch(const TrainConfig& config) {
  // Three users over 6 items per domain: two overlapping users and one with a
  // single domain of target activity but auxiliary events in the other.
  const auto pad = [](IndexSequence real, int len) {
    IndexSequence out(static_cast<std::size_t>(len) - std::min(real.size(), static_cast<std::size_t>(len)), 0);
    const auto keep = std::min(real.size(), static_cast<std::size_t>(len));
    out.insert(out.end(), real.end() - static_cast<std::ptrdiff_t>(keep), real.end());
    return out;
  };
  std::vector<TrainExample> batch(3);
  batch[0].view.target = {pad({1, 2, 3}, config.T), pad({2, 4}, config.T)};
  batch[0].view.auxiliary = {pad({1, 5, 2, 6, 3}, config.T_prime), pad({4, 1, 2}, config.T_prime)};
  batch[0].label = {4, 5};
  batch[0].negatives = {std::vector<int>{6}, std::vector<int>{3}};
  batch[1].view.target = {pad({5, 6}, config.T), pad({1, 3, 6}, config.T)};
  batch[1].view.auxiliary = {pad({6, 4}, config.T_prime), pad({3, 5, 1, 2}, config.T_prime)};
  batch[1].label = {1, 2};
  batch[1].negatives = {std::vector<int>{3}, std::vector<int>{4}};
  batch[2].view.target = {pad({2}, config.T), pad({}, config.T)};
  batch[2].view.auxiliary = {pad({3, 4, 1}, config.T_prime), pad({6, 5}, config.T_prime)};
  batch[2].label = {6, 0};
  batch[2].negatives = {std::vector<int>{5}, std::vector<int>{}};
  return batch;
}

GradCheckReport gradient_check(const TrainConfig& config, const GradCheckOptions& options) {
  Model model(config, 6, 6, derive_seed(config.rng_seed, "gradcheck"));
  auto& store = model.parameters();
  // Zero-initialized biases put whole dead ReLU rows exactly on the kink.
  std::mt19937_64 rng(derive_seed(config.rng_seed, "gradcheck-bias"));
  for (std::size_t p = 0; p < store.size(); ++p)
    if (store[p].value.isZero(0)) init_uniform(store[p], 0.1, rng);
  const auto batch = gradcheck_batch(config);

  const auto loss_value = [&] {
    Tape<double> t;
    return model.batch_loss(t, batch).total.value()(0, 0);
  };

  GradCheckReport report;
  report.tolerance = options.tolerance;
  {
    Tape<double> t;
    auto loss = model.batch_loss(t, batch);
    report.loss = loss.total.value()(0, 0);
    store.zero_grad();
    t.backward(loss.total);
  }
  if (options.corrupt) options.corrupt(store);

  report.worst.rel_error = -1;
  for (std::size_t p = 0; p < store.size(); ++p) {
    auto& param = store[p];
    ++report.parameters;
    for (Index i = 0; i < param.value.size(); ++i) {
      const double original = param.value.data()[i];
      param.value.data()[i] = original + options.step;
      const double plus = loss_value();
      param.value.data()[i] = original - options.step;
      const double minus = loss_value();
      param.value.data()[i] = original;
      const double numeric = (plus - minus) / (2 * options.step);
      const double analytic = param.grad.data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.scalars;
      if (rel > report.worst.rel_error) report.worst = {param.name, i, analytic, numeric, rel};
    }
  }
  report.passed = report.worst.rel_error < options.tolerance;
  return report;
}

}  // namespace macd
