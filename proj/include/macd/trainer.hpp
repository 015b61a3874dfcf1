// SPDX-License-Identifier: Apache-2.0
//
// Mini-batch training with validation-based model selection, model-backed
// candidate scoring (with the inductive generator at inference), and the
// finite-difference gradient check.
#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "macd/config.hpp"
#include "macd/data.hpp"
#include "macd/metrics.hpp"
#include "macd/model.hpp"

namespace macd {

using Model = MacdModel<double>;

struct EpochLog {
  int epoch = 0;  // 1-based
  LossBreakdown loss;  // per-batch mean of every component
  double bce_per_pair = 0;
  double val_ndcg = 0;  // NaN without a validation split
  double seconds = 0;
};

struct TrainResult {
  std::unique_ptr<Model> model;  // parameters of the best validation epoch
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_ndcg = 0;
  long adam_steps = 0;  // optimizer steps at the best epoch
};

struct TrainOptions {
  bool validate = true;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Raised when the loss stops being finite; the message names the batch.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training view and labels for one user: the cut is drawn per domain (last
/// event, or uniformly among positions 1..n−1), negatives avoid the history.
TrainExample make_train_example(const Scenario& scenario, std::size_t user, const TrainConfig& config,
                                std::mt19937_64& rng);

TrainResult train(const TrainConfig& config, const Scenario& scenario, const TrainOptions& options = {});

/// Mean BCE per user–item pair of `model` over every training user: the last
/// target event is the positive, every item outside the history a negative.
double training_bce(const Model& model, const Scenario& scenario);

/// Scores ranking tasks with the model; cold-start users get inductive
/// representations when the model's config enables IRG.
class ModelScorer final : public CandidateScorer {
 public:
  explicit ModelScorer(const Model& model) : model_(model) {}
  void score(const Scenario& scenario, std::vector<RankingTask>& tasks) override;
  std::size_t fallbacks() const override { return fallbacks_; }

 private:
  void build_catalog(const Scenario& scenario);

  const Model& model_;
  std::size_t fallbacks_ = 0;
  bool catalog_ready_ = false;
  std::array<Matrix<double>, 2> catalog_;
};

/// Single-seed report of `model` on a split.
SeedReport evaluate_model(const Model& model, const Scenario& scenario, Partition split, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  // Denominator floor of the relative error |a − n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // Applied to the analytic gradients before comparison (negative controls).
  std::function<void(ParameterStore<double>&)> corrupt;
};

struct GradCheckEntry {
  std::string parameter;
  Index index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  std::size_t parameters = 0;
  std::size_t scalars = 0;
  GradCheckEntry worst;
  double loss = 0;
  bool passed = false;
  double tolerance = 0;
};

/// d=4, T=3, T'=5, h=2, λ=0.5 with the self-attentive backbone.
TrainConfig gradcheck_config();

/// The fixed three-user batch the gradient check differentiates.
std::vector<TrainExample> gradcheck_batch(const TrainConfig& config);

/// Central finite differences over every enumerated parameter scalar.
GradCheckReport gradient_check(const TrainConfig& config, const GradCheckOptions& options = {});

}  // namespace macd
