// SPDX-License-Identifier: Apache-2.0
//
// Training configuration. Every field is reachable by name, which drives the
// JSON config file, the command-line overrides and the checkpoint fingerprint.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "macd/encoders.hpp"

namespace macd {

/// macd: the full framework around the backbone. aux_concat: the backbone run
/// over the auxiliary stream followed by the target stream, no denoising.
enum class Architecture { Macd, AuxConcat };
/// Which users may donate a representation to a cold-start user.
enum class IrgScope { Batch, Catalog };
/// Where the training label is cut in each target stream: a uniformly drawn
/// position every epoch, or always the last event.
enum class TrainCutoff { Random, Last };

std::string_view name(Architecture a);
std::string_view name(IrgScope s);
std::string_view name(TrainCutoff c);

struct TrainConfig {
  int d = 128;
  int T = 20;
  int T_prime = 100;
  int h = 8;
  double tau = 1.0;
  double lambda = 0.4;
  int batch_size = 2048;
  int epochs = 100;
  double learning_rate = 1e-3;
  EncoderKind backbone = EncoderKind::SelfAttentive;
  bool iddm = true;
  bool cddm = true;
  bool cl = true;
  bool fgu = true;
  bool irg = true;
  std::uint64_t rng_seed = 1;
  bool strict_eq7 = false;

  Architecture architecture = Architecture::Macd;
  bool share_encoders = false;
  int negatives_per_positive = 1;
  int eval_negatives = 999;
  int eval_batch_size = 256;
  IrgScope irg_scope = IrgScope::Batch;
  TrainCutoff train_cutoff = TrainCutoff::Random;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  /// λ as used by the loss: zero when the contrastive term is switched off.
  double effective_lambda() const;
  /// Whether the contrastive term is computed at all.
  bool contrastive_active() const;
};

/// Small, fast settings for single-core desk runs.
TrainConfig desk_preset();

/// Name, help text and string accessors for one TrainConfig field.
struct ConfigField {
  std::string name;
  std::string help;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
  bool affects_training = true;  // false for evaluation-only fields
};

const std::vector<ConfigField>& config_fields();

/// Sets one field from its textual value; throws std::invalid_argument.
void set_config_field(TrainConfig& c, const std::string& field, const std::string& value);

std::string config_to_json(const TrainConfig& c);
/// Unknown keys are rejected. Missing keys keep the values already in `base`.
TrainConfig config_from_json(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

/// FNV-1a over the canonical text of every training field plus the vocabulary
/// sizes; evaluation-only fields are excluded.
std::uint64_t config_fingerprint(const TrainConfig& c, int n_items_x, int n_items_y);

/// Stable sub-seed for a named purpose (splitmix64 over seed and a tag).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);

}  // namespace macd
