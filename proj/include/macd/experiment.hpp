// SPDX-License-Identifier: Apache-2.0
//
// Grid experiments: a base config and scenario, axes over config or scenario
// fields (optionally the component ablation grid), several seeds per cell,
// mean ± std tables.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "macd/config.hpp"
#include "macd/data.hpp"
#include "macd/metrics.hpp"
#include "macd/synth.hpp"
#include "macd/trainer.hpp"

namespace macd {

struct DataSource {
  std::optional<SynthConfig> synth;      // generated in memory when set
  std::filesystem::path log_path;        // otherwise read from this TSV
  int min_item_interactions = 1;
};

struct ExperimentAxis {
  std::string field;  // TrainConfig field, overlap_ratio, cold_start_ratio, density or variant
  std::vector<std::string> values;
};

struct ExperimentSpec {
  std::string name = "experiment";
  TrainConfig base = desk_preset();
  DataSource data;
  ScenarioOptions scenario;
  std::vector<ExperimentAxis> axes;
  bool ablation = false;  // prepends the variant axis: full and one run without each component
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  bool vary_scenario_seed = true;  // repeat r uses scenario seed + r
};

/// The ablation variants, full model first.
const std::vector<std::string>& ablation_variants();
/// Applies a variant name ("full", "w/o IDDM", ...) to a config.
void apply_variant(TrainConfig& c, const std::string& variant);

/// Parses the JSON experiment file format (see README).
ExperimentSpec parse_experiment(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentSpec load_experiment(const std::filesystem::path& path);

struct CellResult {
  std::vector<std::pair<std::string, std::string>> settings;  // axis → value
  RankingReport report;
  std::string error;  // empty on success
  double seconds = 0;
};

struct ExperimentResult {
  std::vector<std::string> axis_names;
  std::vector<CellResult> cells;

  /// The cell whose settings contain every given pair; null when absent.
  const CellResult* find(const std::vector<std::pair<std::string, std::string>>& settings) const;
};

/// Trained models keyed by training-relevant config, scenario and seed, so
/// cells that differ only in inference options share one training run.
class ModelCache {
 public:
  std::shared_ptr<Model> get_or_train(const TrainConfig& config, const Scenario& scenario,
                                      const std::string& scenario_key);
  std::size_t trainings() const { return trainings_; }

 private:
  std::map<std::string, std::shared_ptr<Model>> models_;
  std::size_t trainings_ = 0;
};

using ExperimentProgress = std::function<void(const std::string& message)>;

ExperimentResult run_experiment(const ExperimentSpec& spec, ModelCache* cache = nullptr,
                                const ExperimentProgress& progress = {});

/// One row per cell: the axis values, status, then mean and std of NDCG@10
/// and HR@10 for every domain × subgroup.
std::string experiment_csv(const ExperimentResult& result);

}  // namespace macd
