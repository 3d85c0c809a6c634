// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#include "shardtrain/trainer.hpp"

#include <cstdio>
#include <filesystem>
#include <mutex>
#include <ostream>
#include <string>

#include <json.hpp>

#include "shardtrain/ckptstore.hpp"
#include "shardtrain/errors.hpp"
#include "shardtrain/rng.hpp"

namespace shardtrain::trainer {

namespace {

std::string step_dir_name(long step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%08ld", step);
  return buf;
}

// Newest step directory under the checkpoint root, by step number.
std::optional<long> latest_step(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) {
    return std::nullopt;
  }
  std::optional<long> best;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (!entry.is_directory()) {
      continue;
    }
    const std::string name = entry.path().filename().string();
    long step = 0;
    if (std::sscanf(name.c_str(), "step_%08ld", &step) == 1 &&
        name == step_dir_name(step)) {
      if (!best || step > *best) {
        best = step;
      }
    }
  }
  return best;
}

}  // namespace

TrainResult train_run(const runconfig::RunConfig& cfg, fabric::Mode mode,
                      std::ostream* metrics, bool resume) {
  cfg.validate();
  const std::string hash = cfg.config_hash();
  const engine::NetTopology topo = cfg.topology();
  const netspec::ModelSpec spec = cfg.model_spec();
  const optim::LrSchedule sched = cfg.schedule();

  // Activation footprint of one microbatch; the budget constrains the
  // per-rank backward peak.
  const netspec::ActivationProfile prof =
      netspec::activation_profile(spec, cfg.batch_per_rank, 8);

  TrainResult out;
  std::uint64_t full_peak = 0;
  for (std::uint64_t v : prof.m) {
    full_peak += v;
  }
  out.peak_modeled_mem = full_peak;
  if (cfg.memory_budget_bytes.has_value()) {
    ckptplan::AutoPlanResult ap =
        ckptplan::auto_plan(prof.m, *cfg.memory_budget_bytes);
    if (!ap.plan.has_value()) {
      throw ConfigError(
          "memory budget of " + std::to_string(*cfg.memory_budget_bytes) +
          " bytes is infeasible; the smallest achievable backward peak is " +
          std::to_string(ap.min_achievable_peak) + " bytes");
    }
    out.plan = *ap.plan;
    out.peak_modeled_mem = ap.plan->modeled_peak;
  }
  const ckptplan::CheckpointPlan* plan =
      out.plan.has_value() ? &*out.plan : nullptr;

  const swav::SynthDataset ds =
      swav::synth_dataset(cfg.data.n_clusters, cfg.data.dim,
                          cfg.data.n_samples, cfg.data.spread, cfg.seed);

  long start_iter = 0;
  std::vector<fsdp::ShardedState> states(
      static_cast<std::size_t>(cfg.world_size));
  if (resume) {
    if (cfg.checkpoint_dir.empty()) {
      throw ConfigError("resume requested but checkpoint_dir is empty");
    }
    const std::optional<long> step = latest_step(cfg.checkpoint_dir);
    if (!step.has_value()) {
      throw IoError("resume requested but no checkpoint exists under " +
                    cfg.checkpoint_dir);
    }
    const std::filesystem::path dir =
        std::filesystem::path(cfg.checkpoint_dir) / step_dir_name(*step);
    for (int r = 0; r < cfg.world_size; ++r) {
      ckptstore::LoadedShards loaded =
          ckptstore::load_sharded(dir, r, cfg.world_size, topo);
      if (loaded.info.config_hash != hash) {
        throw ConfigError("checkpoint " + dir.string() +
                          " was written by a different configuration "
                          "(config hash " + loaded.info.config_hash +
                          ", expected " + hash + ")");
      }
      states[static_cast<std::size_t>(r)] = std::move(loaded.state);
      start_iter = loaded.info.step + 1;
    }
  } else {
    const engine::LayeredNet net = engine::init_net(topo, cfg.seed);
    for (int r = 0; r < cfg.world_size; ++r) {
      states[static_cast<std::size_t>(r)] =
          fsdp::shard_params(net, cfg.world_size, r);
    }
  }

  if (start_iter >= cfg.total_iters) {
    // Nothing left to run; report the restored state.
    std::vector<const fsdp::ShardedState*> ptrs;
    for (const auto& s : states) {
      ptrs.push_back(&s);
    }
    out.final_state = fsdp::dense_from_shards(ptrs);
    out.last_step = start_iter - 1;
    return out;
  }

  const int b = cfg.batch_per_rank;
  const std::size_t global_b =
      static_cast<std::size_t>(cfg.world_size) * static_cast<std::size_t>(b);

  out.losses.assign(static_cast<std::size_t>(cfg.total_iters - start_iter),
                    0.0);
  std::mutex io_mu;

  fabric::World world(cfg.world_size, mode);
  world.run([&](fabric::WorldHandle& h) {
    const int rank = h.rank();
    fsdp::ShardedState& st = states[static_cast<std::size_t>(rank)];
    fsdp::StepConfig step_cfg;
    step_cfg.swav = cfg.swav;
    step_cfg.larc = cfg.larc();
    step_cfg.sched = sched;
    step_cfg.momentum = cfg.optim.momentum;
    step_cfg.weight_decay = cfg.optim.weight_decay;
    step_cfg.seed = cfg.seed;

    for (long iter = start_iter; iter < cfg.total_iters; ++iter) {
      // Every rank draws the same global index list; samples and view keys
      // are tied to global batch positions.
      Rng batch_rng(mix_key({cfg.seed, streams::kBatch,
                             static_cast<std::uint64_t>(iter)}));
      Matrix local(static_cast<std::size_t>(b),
                   static_cast<std::size_t>(cfg.data.dim));
      std::vector<std::uint64_t> local_keys(static_cast<std::size_t>(b));
      for (std::size_t pos = 0; pos < global_b; ++pos) {
        const std::uint64_t idx =
            batch_rng.below(static_cast<std::uint64_t>(cfg.data.n_samples));
        const std::size_t lo = static_cast<std::size_t>(rank) *
                               static_cast<std::size_t>(b);
        if (pos >= lo && pos < lo + static_cast<std::size_t>(b)) {
          const std::size_t i = pos - lo;
          const double* srow = ds.samples.row(idx);
          for (std::size_t d = 0; d < local.cols; ++d) {
            local.at(i, d) = srow[d];
          }
          local_keys[i] = pos;
        }
      }

      step_cfg.iter = iter;
      const double loss = fsdp::fsdp_train_step(st, h, local, local_keys,
                                                step_cfg, plan);
      out.losses[static_cast<std::size_t>(iter - start_iter)] = loss;

      if (rank == 0 && metrics != nullptr) {
        nlohmann::json row;
        row["iter"] = iter;
        row["loss"] = loss;
        row["lr"] = optim::schedule_lr(iter, sched);
        row["peak_modeled_mem"] = out.peak_modeled_mem;
        std::lock_guard<std::mutex> lk(io_mu);
        (*metrics) << row.dump() << "\n";
      }

      const bool periodic = cfg.checkpoint_every > 0 &&
                            (iter + 1) % cfg.checkpoint_every == 0;
      const bool final_iter = iter + 1 == cfg.total_iters;
      if (!cfg.checkpoint_dir.empty() && (periodic || final_iter)) {
        // All ranks must have finished the step before anyone writes, and
        // the directory must be complete before anyone proceeds.
        h.barrier();
        ckptstore::StepInfo info;
        info.step = iter;
        info.seed = cfg.seed;
        info.config_hash = hash;
        ckptstore::save_sharded(
            st, info,
            std::filesystem::path(cfg.checkpoint_dir) / step_dir_name(iter));
        h.barrier();
      }
    }
  });

  std::vector<const fsdp::ShardedState*> ptrs;
  for (const auto& s : states) {
    ptrs.push_back(&s);
  }
  out.final_state = fsdp::dense_from_shards(ptrs);
  out.last_step = cfg.total_iters - 1;
  return out;
}

}  // namespace shardtrain::trainer
