// SPDX-License-Identifier: Apache-2.0
#include "macd/experiment.hpp"

#include <charconv>
#include <chrono>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace macd {

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v{"full", "w/o IDDM", "w/o CDDM", "w/o CL", "w/o FGU", "w/o IRG"};
  return v;
}

void apply_variant(TrainConfig& c, const std::string& variant) {
  if (variant == "full") return;
  if (variant == "w/o IDDM") {
    c.iddm = false;
  } else if (variant == "w/o CDDM") {
    c.cddm = false;
  } else if (variant == "w/o CL") {
    c.cl = false;
  } else if (variant == "w/o FGU") {
    c.fgu = false;
  } else if (variant == "w/o IRG") {
    c.irg = false;
  } else {
    throw std::invalid_argument("unknown variant '" + variant + "'");
  }
}

namespace {

using json = nlohmann::ordered_json;

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v.get<double>());
    return std::string(buf, p);
  }
  throw std::invalid_argument("experiment: axis values must be scalars");
}

bool is_scenario_field(const std::string& f) {
  return f == "overlap_ratio" || f == "cold_start_ratio" || f == "density";
}

void set_scenario_field(ScenarioOptions& o, const std::string& f, const std::string& v) {
  const double x = std::stod(v);
  if (f == "overlap_ratio") o.overlap_ratio = x;
  if (f == "cold_start_ratio") o.cold_start_ratio = x;
  if (f == "density") o.density = x;
}

SynthConfig synth_from_json(const json& j) {
  SynthConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "n_users") c.n_users = v.get<int>();
    else if (key == "n_items_x") c.n_items_x = v.get<int>();
    else if (key == "n_items_y") c.n_items_y = v.get<int>();
    else if (key == "n_latent_interests") c.n_latent_interests = v.get<int>();
    else if (key == "interests_per_user") c.interests_per_user = v.get<int>();
    else if (key == "power_law_exponent") c.power_law_exponent = v.get<double>();
    else if (key == "min_seq_len") c.min_seq_len = v.get<int>();
    else if (key == "max_seq_len") c.max_seq_len = v.get<int>();
    else if (key == "aux_multiplier") c.aux_multiplier = v.get<double>();
    else if (key == "noise_rate") c.noise_rate = v.get<double>();
    else if (key == "cross_domain_interest_correlation") c.cross_domain_interest_correlation = v.get<double>();
    else if (key == "rng_seed") c.rng_seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("experiment: unknown synth field '" + key + "'");
  }
  c.validate();
  return c;
}

std::string settings_key(const std::vector<std::pair<std::string, std::string>>& s) {
  std::string k;
  for (const auto& [a, v] : s) k += a + "=" + v + ";";
  return k;
}

}  // namespace

ExperimentSpec parse_experiment(const std::string& text, const std::filesystem::path& base_dir) {
  ExperimentSpec spec;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("experiment file is not valid JSON: ") + e.what());
  }
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "name") {
        spec.name = v.get<std::string>();
      } else if (key == "base") {
        spec.base = config_from_json(v.dump(), spec.base);
      } else if (key == "synth") {
        spec.data.synth = synth_from_json(v);
      } else if (key == "data") {
        spec.data.log_path = base_dir / v.get<std::string>();
      } else if (key == "min_item_interactions") {
        spec.data.min_item_interactions = v.get<int>();
      } else if (key == "scenario") {
        for (const auto& [sk, sv] : v.items()) {
          if (sk == "seed") {
            spec.scenario.seed = sv.get<std::uint64_t>();
          } else if (sk == "train_fraction") {
            spec.scenario.train_fraction = sv.get<double>();
          } else if (sk == "val_fraction") {
            spec.scenario.val_fraction = sv.get<double>();
          } else if (is_scenario_field(sk)) {
            set_scenario_field(spec.scenario, sk, scalar_text(sv));
          } else {
            throw std::invalid_argument("experiment: unknown scenario field '" + sk + "'");
          }
        }
      } else if (key == "axes") {
        for (const auto& [field, values] : v.items()) {
          ExperimentAxis axis{field, {}};
          for (const auto& x : values) axis.values.push_back(scalar_text(x));
          if (axis.values.empty()) throw std::invalid_argument("experiment: axis '" + field + "' has no values");
          spec.axes.push_back(std::move(axis));
        }
      } else if (key == "ablation") {
        spec.ablation = v.get<bool>();
      } else if (key == "seeds") {
        spec.seeds.clear();
        if (v.is_number_integer()) {
          for (int s = 1; s <= v.get<int>(); ++s) spec.seeds.push_back(static_cast<std::uint64_t>(s));
        } else {
          for (const auto& s : v) spec.seeds.push_back(s.get<std::uint64_t>());
        }
        if (spec.seeds.empty()) throw std::invalid_argument("experiment: no seeds");
      } else if (key == "vary_scenario_seed") {
        spec.vary_scenario_seed = v.get<bool>();
      } else {
        throw std::invalid_argument("experiment: unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("experiment file: ") + e.what());
  }
  if (!spec.data.synth && spec.data.log_path.empty())
    throw std::invalid_argument("experiment: either 'synth' or 'data' is required");
  return spec;
}

ExperimentSpec load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open experiment file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment(buf.str(), path.parent_path());
}

const CellResult* ExperimentResult::find(const std::vector<std::pair<std::string, std::string>>& settings) const {
  for (const auto& c : cells) {
    bool all = true;
    for (const auto& want : settings)
      if (std::find(c.settings.begin(), c.settings.end(), want) == c.settings.end()) all = false;
    if (all) return &c;
  }
  return nullptr;
}

std::shared_ptr<Model> ModelCache::get_or_train(const TrainConfig& config, const Scenario& scenario,
                                                const std::string& scenario_key) {
  const std::string key =
      scenario_key + "|" +
      std::to_string(config_fingerprint(config, scenario.vocab(Domain::X).size(), scenario.vocab(Domain::Y).size()));
  auto it = models_.find(key);
  if (it != models_.end()) {
    it->second->set_inference_options(config.irg, config.irg_scope, config.eval_negatives, config.eval_batch_size);
    return it->second;
  }
  auto result = train(config, scenario);
  ++trainings_;
  std::shared_ptr<Model> model = std::move(result.model);
  models_.emplace(key, model);
  return model;
}

ExperimentResult run_experiment(const ExperimentSpec& spec, ModelCache* cache, const ExperimentProgress& progress) {
  ModelCache local;
  if (!cache) cache = &local;

  std::vector<ExperimentAxis> axes;
  if (spec.ablation) axes.push_back({"variant", ablation_variants()});
  axes.insert(axes.end(), spec.axes.begin(), spec.axes.end());

  // Load the interaction log once.
  InteractionLog log;
  if (spec.data.synth) {
    std::istringstream in(to_tsv(generate_dataset(*spec.data.synth)));
    log = ingest_log(in, spec.data.min_item_interactions, "synthetic");
  } else {
    log = ingest_log(spec.data.log_path, spec.data.min_item_interactions);
  }
  const auto histories = collect_histories(log);
  std::map<std::string, Scenario> scenarios;

  ExperimentResult result;
  for (const auto& a : axes) result.axis_names.push_back(a.field);

  std::vector<std::size_t> counter(axes.size(), 0);
  while (true) {
    CellResult cell;
    TrainConfig cfg = spec.base;
    ScenarioOptions sopts = spec.scenario;
    const auto started = std::chrono::steady_clock::now();
    try {
      for (std::size_t a = 0; a < axes.size(); ++a) {
        const auto& field = axes[a].field;
        const auto& value = axes[a].values[counter[a]];
        cell.settings.emplace_back(field, value);
        if (field == "variant") {
          apply_variant(cfg, value);
        } else if (is_scenario_field(field)) {
          set_scenario_field(sopts, field, value);
        } else {
          set_config_field(cfg, field, value);
        }
      }
      cfg.validate();
      if (progress) progress("cell " + settings_key(cell.settings));
      cell.report.k = 10;
      for (std::size_t r = 0; r < spec.seeds.size(); ++r) {
        ScenarioOptions so = sopts;
        if (spec.vary_scenario_seed) so.seed = sopts.seed + r;
        std::ostringstream skey;
        skey << so.overlap_ratio << '/' << so.cold_start_ratio << '/' << so.density << '/' << so.train_fraction
             << '/' << so.val_fraction << '/' << so.seed;
        auto sit = scenarios.find(skey.str());
        if (sit == scenarios.end())
          sit = scenarios.emplace(skey.str(), make_scenario(histories, log.vocabs, so)).first;
        TrainConfig run = cfg;
        run.rng_seed = spec.seeds[r];
        auto model = cache->get_or_train(run, sit->second, skey.str());
        cell.report.runs.push_back(
            evaluate_model(*model, sit->second, Partition::Test, derive_seed(run.rng_seed, "test")));
        if (progress)
          progress("  seed " + std::to_string(run.rng_seed) +
                   " ndcg@10=" + std::to_string(cell.report.runs.back().headline_ndcg()));
      }
    } catch (const std::exception& e) {
      cell.error = e.what();
      if (progress) progress("  failed: " + cell.error);
    }
    cell.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.cells.push_back(std::move(cell));

    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++counter[a] < axes[a].values.size()) break;
      counter[a] = 0;
      if (a == 0) return result;
    }
    if (axes.empty()) return result;
  }
}

std::string experiment_csv(const ExperimentResult& result) {
  const auto fmt = [](double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
  };
  const auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c == '\n' ? ' ' : c;
    }
    return q + "\"";
  };
  std::string out;
  for (const auto& a : result.axis_names) out += quote(a) + ",";
  out += "status,runs";
  for (Domain d : kDomains)
    for (Subgroup g : kSubgroups)
      for (const char* m : {"ndcg10", "hr10"}) {
        std::string col = std::string(name(d)) + "_";
        if (g != Subgroup::All) col += std::string(name(g)) + "_";
        col += m;
        out += "," + col + "_mean," + col + "_std";
      }
  out += ",seconds\n";
  for (const auto& c : result.cells) {
    for (const auto& [a, v] : c.settings) out += quote(v) + ",";
    for (std::size_t i = c.settings.size(); i < result.axis_names.size(); ++i) out += ",";
    out += c.error.empty() ? "ok" : quote("failed: " + c.error);
    out += "," + std::to_string(c.report.runs.size());
    for (Domain d : kDomains)
      for (Subgroup g : kSubgroups)
        for (bool ndcg : {true, false})
          out += "," + fmt(c.report.mean(d, g, ndcg)) + "," + fmt(c.report.stddev(d, g, ndcg));
    out += "," + fmt(c.seconds) + "\n";
  }
  return out;
}

}  // namespace macd
