// SPDX-License-Identifier: Apache-2.0
//
// Weakly supervised training: SGD with momentum on the summed BCE of the
// three video-level predictions. Runs are deterministic given (config, seed);
// batches are shuffled by a per-epoch seeded permutation and dropout streams
// derive from (seed, epoch, step). Parameters, momentum and batch-norm state
// live on the 32-bit grid so checkpoints restore training bit-exactly.

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include "avp/checkpoint.hpp"
#include "avp/dataset.hpp"
#include "avp/metrics.hpp"
#include "avp/model.hpp"

namespace avp::train {

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  std::size_t eval_every = 1;  // 0: evaluate only after the final epoch
  model::ModelConfig model;
  model::AblationFlags ablation;
};

struct TrainResult {
  model::ModelParams params;
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
  std::vector<std::pair<std::size_t, metrics::EvalReport>> reports;  // (epoch, report)
  Checkpoint checkpoint;
};

/// Trains on `ds` (evaluating on it for the per-epoch log). `log`, when
/// given, receives one JSON line per epoch. `resume` continues a previous
/// run from its recorded epoch; dataset and model config must match.
TrainResult train(const data::Dataset& ds, const TrainConfig& cfg, std::ostream* log = nullptr,
                  const Checkpoint* resume = nullptr);

/// Snapshot of the current model + optimizer state in checkpoint form.
Checkpoint make_checkpoint(model::ModelParams& params, const model::AblationFlags& ablation,
                           const std::vector<std::vector<double>>& velocity,
                           std::uint64_t manifest_hash, std::uint64_t seed,
                           std::uint32_t next_epoch, std::uint64_t global_step);

/// Restores parameters, momentum and state from a checkpoint into a freshly
/// constructed model. Throws when the manifest hash or shapes disagree.
void apply_checkpoint(const Checkpoint& ck, model::ModelParams& params,
                      std::vector<std::vector<double>>& velocity, std::uint64_t manifest_hash);

}  // namespace avp::train
