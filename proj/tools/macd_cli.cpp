// SPDX-License-Identifier: Apache-2.0
//
// macd: synth | prepare | train | evaluate | gradcheck | experiment
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "macd/checkpoint.hpp"
#include "macd/config.hpp"
#include "macd/data.hpp"
#include "macd/experiment.hpp"
#include "macd/metrics.hpp"
#include "macd/synth.hpp"
#include "macd/trainer.hpp"

namespace fs = std::filesystem;
using namespace macd;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Config file plus one flag per TrainConfig field.
struct ConfigFlags {
  std::string config_path;
  std::string preset;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON training config");
    app->add_option("--preset", preset, "start from a preset: default or desk")->check(CLI::IsMember({"default", "desk"}));
    for (const auto& f : config_fields()) {
      auto* opt = app->add_option_function<std::string>(
          "--" + f.name, [this, name = f.name](const std::string& v) { overrides[name] = v; }, f.help);
      opt->type_name("VALUE");
    }
  }

  TrainConfig resolve(TrainConfig base) const {
    if (preset == "desk") base = desk_preset();
    if (preset == "default") base = TrainConfig{};
    try {
      if (!config_path.empty()) base = load_config(config_path, base);
      for (const auto& [k, v] : overrides) set_config_field(base, k, v);
      base.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return base;
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string loss_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,total,cl_x,cl_y,bce_x,bce_y,lambda,bce_per_pair,val_ndcg10,seconds\n";
  for (const auto& e : log) {
    out += std::to_string(e.epoch) + "," + fmt(e.loss.total) + "," + fmt(e.loss.l_cl_x) + "," + fmt(e.loss.l_cl_y) +
           "," + fmt(e.loss.l_cls_x) + "," + fmt(e.loss.l_cls_y) + "," + fmt(e.loss.lambda) + "," +
           fmt(e.bce_per_pair) + "," + (std::isnan(e.val_ndcg) ? std::string() : fmt(e.val_ndcg)) + "," +
           fmt(e.seconds) + "\n";
  }
  return out;
}

std::vector<std::uint64_t> seed_list(int count, std::uint64_t first) {
  std::vector<std::uint64_t> s;
  for (int i = 0; i < count; ++i) s.push_back(first + static_cast<std::uint64_t>(i));
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-agnostic contrastive denoising for cross-domain sequential recommendation"};
  app.set_help_flag("--help", "print this help");
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic two-domain interaction log (TSV)");
  SynthConfig sc;
  std::string synth_out;
  synth->add_option("--out,-o", synth_out, "output TSV; ground truth goes to <out>.truth.json")->required();
  synth->add_option("--n_users", sc.n_users);
  synth->add_option("--n_items_x", sc.n_items_x);
  synth->add_option("--n_items_y", sc.n_items_y);
  synth->add_option("--n_latent_interests", sc.n_latent_interests);
  synth->add_option("--interests_per_user", sc.interests_per_user);
  synth->add_option("--power_law_exponent", sc.power_law_exponent);
  synth->add_option("--min_seq_len", sc.min_seq_len);
  synth->add_option("--max_seq_len", sc.max_seq_len);
  synth->add_option("--aux_multiplier", sc.aux_multiplier);
  synth->add_option("--noise_rate", sc.noise_rate);
  synth->add_option("--cross_domain_interest_correlation", sc.cross_domain_interest_correlation);
  synth->add_option("--seed", sc.rng_seed);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "ingest a log and build a scenario split file");
  std::string prep_log, prep_out;
  int min_items = 1;
  ScenarioOptions so;
  prepare->add_option("--log", prep_log, "interaction TSV")->required();
  prepare->add_option("--out,-o", prep_out, "scenario JSON")->required();
  prepare->add_option("--min_item_interactions", min_items, "drop rarer items");
  prepare->add_option("--overlap_ratio", so.overlap_ratio, "K_u");
  prepare->add_option("--cold_start_ratio", so.cold_start_ratio, "K_cs");
  prepare->add_option("--density", so.density, "D_s");
  prepare->add_option("--train_fraction", so.train_fraction);
  prepare->add_option("--val_fraction", so.val_fraction);
  prepare->add_option("--seed", so.seed);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model on a scenario");
  ConfigFlags train_flags;
  std::string train_scenario, train_dir;
  bool no_validate = false;
  train_cmd->add_option("--scenario", train_scenario, "scenario JSON from prepare")->required();
  train_cmd->add_option("--out-dir", train_dir, "writes model.ckpt and loss.csv")->required();
  train_cmd->add_flag("--no-validation", no_validate, "skip per-epoch validation (last epoch is kept)");
  train_flags.attach(train_cmd);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "rank held-out items with a trained model");
  ConfigFlags eval_flags;
  std::string eval_scenario, eval_ckpt, eval_out, eval_split = "test";
  int eval_seeds = 1;
  std::uint64_t eval_seed = 1;
  eval_cmd->add_option("--scenario", eval_scenario)->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--out,-o", eval_out, "RankingReport CSV (JSON alongside as <out>.json)");
  eval_cmd->add_option("--split", eval_split)->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--seeds", eval_seeds, "number of negative-sampling seeds")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--eval_seed", eval_seed, "first sampling seed");
  eval_flags.attach(eval_cmd);

  // gradcheck
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every parameter gradient");
  ConfigFlags gc_flags;
  GradCheckOptions gc_opts;
  gc_cmd->add_option("--step", gc_opts.step);
  gc_cmd->add_option("--tolerance", gc_opts.tolerance);
  gc_cmd->add_option("--floor", gc_opts.floor);
  gc_flags.attach(gc_cmd);

  // experiment
  auto* exp_cmd = app.add_subcommand("experiment", "run a grid of trainings and write a summary CSV");
  std::string exp_spec, exp_out;
  exp_cmd->add_option("--spec", exp_spec, "experiment JSON")->required();
  exp_cmd->add_option("--out,-o", exp_out, "summary CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*synth) {
      sc.validate();
      const auto data = generate(sc, synth_out);
      std::cout << "wrote " << data.events.size() << " events for " << sc.n_users << " users to " << synth_out << "\n";
    } else if (*prepare) {
      const auto log = ingest_log(prep_log, min_items);
      const auto scenario = make_scenario(collect_histories(log), log.vocabs, so);
      save_scenario(scenario, prep_out);
      std::cout << "users " << scenario.users.size() << " (train " << scenario.members(Partition::Train).size()
                << ", val " << scenario.members(Partition::Val).size() << ", test "
                << scenario.members(Partition::Test).size() << "), items X " << scenario.vocab(Domain::X).size()
                << " Y " << scenario.vocab(Domain::Y).size() << "\n";
    } else if (*train_cmd) {
      const auto cfg = train_flags.resolve(TrainConfig{});
      const auto scenario = load_scenario(train_scenario);
      TrainOptions opts;
      opts.validate = !no_validate;
      opts.on_epoch = [](const EpochLog& e) {
        std::cout << "epoch " << e.epoch << " loss " << e.loss.total << " bce/pair " << e.bce_per_pair;
        if (!std::isnan(e.val_ndcg)) std::cout << " val ndcg@10 " << e.val_ndcg;
        std::cout << " (" << e.seconds << " s)\n" << std::flush;
      };
      auto result = train(cfg, scenario, opts);
      fs::create_directories(train_dir);
      save_checkpoint(fs::path(train_dir) / "model.ckpt", *result.model, result.best_epoch, result.adam_steps);
      write_text(fs::path(train_dir) / "loss.csv", loss_csv(result.log));
      std::cout << "best epoch " << result.best_epoch << ", checkpoint " << (fs::path(train_dir) / "model.ckpt")
                << "\n";
    } else if (*eval_cmd) {
      const auto info = read_checkpoint_info(eval_ckpt);
      const auto cfg = eval_flags.resolve(info.config);
      const auto scenario = load_scenario(eval_scenario);
      auto model = load_checkpoint(eval_ckpt, cfg, scenario.vocab(Domain::X).size(), scenario.vocab(Domain::Y).size());
      RankingReport report;
      for (auto s : seed_list(eval_seeds, eval_seed))
        report.runs.push_back(evaluate_model(*model, scenario, parse_partition(eval_split), s));
      const auto csv = report_csv(report);
      if (eval_out.empty()) {
        std::cout << csv;
      } else {
        write_text(eval_out, csv);
        write_text(eval_out + ".json", report_json(report));
      }
      for (Domain d : kDomains)
        std::cerr << name(d) << " ndcg@10 " << report.mean(d, Subgroup::All, true) << " hr@10 "
                  << report.mean(d, Subgroup::All, false) << "\n";
    } else if (*gc_cmd) {
      const auto cfg = gc_flags.resolve(gradcheck_config());
      const auto r = gradient_check(cfg, gc_opts);
      std::cout << "parameters " << r.parameters << ", scalars " << r.scalars << ", loss " << r.loss << "\n"
                << "worst " << r.worst.parameter << "[" << r.worst.index << "] analytic " << r.worst.analytic
                << " numeric " << r.worst.numeric << " rel error " << r.worst.rel_error << "\n"
                << (r.passed ? "PASS" : "FAIL") << " (tolerance " << r.tolerance << ")\n";
      return r.passed ? 0 : 2;
    } else if (*exp_cmd) {
      ExperimentSpec spec;
      try {
        spec = load_experiment(exp_spec);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const auto result = run_experiment(spec, nullptr, [](const std::string& m) { std::cerr << m << "\n"; });
      write_text(exp_out, experiment_csv(result));
      std::size_t failed = 0;
      for (const auto& c : result.cells) failed += c.error.empty() ? 0 : 1;
      std::cout << result.cells.size() << " cells, " << failed << " failed, written to " << exp_out << "\n";
      return failed == 0 ? 0 : 2;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
