// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0
//
// Training driver: builds the synthetic dataset, shards the model over an
// in-process world, runs the optimization loop with optional activation
// checkpointing, streams one JSONL metric row per iteration and persists
// sharded checkpoints. Resume restores bit-identical training state.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "shardtrain/ckptplan.hpp"
#include "shardtrain/fabric.hpp"
#include "shardtrain/fsdp.hpp"
#include "shardtrain/runconfig.hpp"

namespace shardtrain::trainer {

struct TrainResult {
  // Per-iteration swapped-prediction loss, identical on every rank.
  std::vector<double> losses;
  long last_step = -1;
  // Dense view of the final parameters and momentum.
  fsdp::DenseTrainState final_state;
  // The plan in force, when a memory budget requested one.
  std::optional<ckptplan::CheckpointPlan> plan;
  std::uint64_t peak_modeled_mem = 0;
};

// Runs the configured job. `metrics` (when non-null) receives one JSON line
// per iteration: {"iter", "loss", "lr", "peak_modeled_mem"}. With `resume`,
// training continues from the newest checkpoint under cfg.checkpoint_dir;
// the stored config hash must match cfg exactly.
TrainResult train_run(const runconfig::RunConfig& cfg, fabric::Mode mode,
                      std::ostream* metrics, bool resume);

}  // namespace shardtrain::trainer
