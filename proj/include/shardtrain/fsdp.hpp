// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shardtrain/ckptplan.hpp"
#include "shardtrain/engine.hpp"
#include "shardtrain/fabric.hpp"
#include "shardtrain/optim.hpp"
#include "shardtrain/swav.hpp"

namespace shardtrain::fsdp {

// Uniform shard length: every rank holds ceil(full / world) elements, the
// last shard zero-padded. Padding never leaves the shard domain: gathers
// truncate it away and it contributes exact zeros to reductions.
std::size_t padded_shard_len(std::size_t full, int world_size);

struct SlotShard {
  std::vector<double> weights;
  std::vector<double> momentum;
  std::size_t full_length = 0;
};

// One rank's slice of every parameter slot, plus optimizer state.
struct ShardedState {
  engine::NetTopology topo;
  std::vector<SlotShard> slots;
  int world_size = 1;
  int rank = 0;
};

ShardedState shard_params(const engine::LayeredNet& net, int world_size,
                          int rank);

// Dense training state for the baseline path: full parameters plus full
// momentum per slot.
struct DenseTrainState {
  engine::LayeredNet net;
  std::vector<std::vector<double>> momentum;
};

DenseTrainState make_dense_state(const engine::LayeredNet& net);

// Reassembles dense state from one shard per rank (rank order, matching
// world size). Validates consistency.
DenseTrainState dense_from_shards(
    const std::vector<const ShardedState*>& shards);

// Everything one optimization step needs beyond the batch.
struct StepConfig {
  swav::SwavConfig swav;
  optim::LarcConfig larc;
  optim::LrSchedule sched;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  long iter = 0;
  std::uint64_t seed = 0;
};

// Multi-crop views for a block of samples, one matrix per view. keys[i]
// seeds sample i's view noise, so a sample's views depend only on
// (seed, iter, key), never on which rank hosts it.
std::vector<Matrix> build_view_batches(const Matrix& rows,
                                       std::span<const std::uint64_t> keys,
                                       const swav::SwavConfig& cfg, long iter,
                                       std::uint64_t seed);

// One fully-sharded training step. Parameters are materialized layer by
// layer (prefetch depth 1 during forward, so at most two layers are ever
// unsharded at once), gradients leave each rank through one reduce_scatter
// per slot in descending slot order, trust coefficients use one batched
// all_reduce, and the returned loss is identical on every rank.
double fsdp_train_step(ShardedState& state, fabric::WorldHandle& h,
                       const Matrix& local_batch,
                       std::span<const std::uint64_t> local_keys,
                       const StepConfig& cfg,
                       const ckptplan::CheckpointPlan* plan);

// Serial oracle: consumes the same global batch split into world_size
// microbatches and mirrors the sharded step's reduction structure (per-rank
// partials folded in ascending rank order, chunked norms). Produces bitwise
// the parameters the sharded path produces.
double ddp_baseline_step(DenseTrainState& state, const Matrix& global_batch,
                         std::span<const std::uint64_t> keys,
                         int virtual_world, const StepConfig& cfg);

// Communication/compute overlap model for one forward sweep. With prefetch
// off, gather l and compute l alternate on one timeline. With prefetch on,
// gathers run back to back on a communication lane and compute l starts as
// soon as both gather l and compute l-1 are done.
struct ScheduleEvent {
  std::string op;  // "all_gather" or "compute"
  std::size_t layer = 0;
  double t_start = 0.0;
  double t_end = 0.0;
};

struct ScheduleResult {
  std::vector<ScheduleEvent> events;
  double makespan = 0.0;
};

ScheduleResult simulate_schedule(std::span<const double> comm_cost,
                                 std::span<const double> compute_cost,
                                 bool prefetch);

}  // namespace shardtrain::fsdp
