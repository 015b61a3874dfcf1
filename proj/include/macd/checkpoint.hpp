// SPDX-License-Identifier: Apache-2.0
//
// Binary model checkpoints: every parameter with its Adam moments, the epoch,
// the optimizer step count and the training config with its fingerprint.
// Values are stored as raw IEEE doubles, so a round trip is bit-exact.
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>

#include "macd/config.hpp"
#include "macd/trainer.hpp"

namespace macd {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointInfo {
  TrainConfig config;
  int n_items_x = 0;
  int n_items_y = 0;
  int epoch = 0;
  long adam_steps = 0;
  std::uint64_t fingerprint = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, int epoch, long adam_steps);

/// Header only (config, sizes, epoch); parameters are not read.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Rebuilds the model stored in `path`. Refuses a checkpoint whose fingerprint
/// differs from that of `expected` with the given vocabulary sizes.
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path, const TrainConfig& expected, int n_items_x,
                                       int n_items_y, CheckpointInfo* info = nullptr);

/// Rebuilds the model with the config stored in the checkpoint itself.
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

}  // namespace macd
