// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a nested JSON document with sections model / swav /
// optim / data plus top-level run controls. Missing keys take the toy
// defaults; unknown keys are rejected with their JSON pointer path, so a
// typo never silently trains the wrong run.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "shardtrain/engine.hpp"
#include "shardtrain/netspec.hpp"
#include "shardtrain/optim.hpp"
#include "shardtrain/swav.hpp"

namespace shardtrain::runconfig {

struct ModelSection {
  double w0 = 0.0;
  double wa = 0.0;
  double wm = 0.0;
  int depth = 0;
  int group_width = 1;
  int scale_divisor = 1;
  std::vector<int> head_dims;
};

struct OptimSection {
  double lr_base = 0.0;
  double lr_peak = 0.0;
  double lr_final = 0.0;
  long warmup_iters = 0;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  double larc_eta = 0.001;
  double larc_beta = 0.0;
  double larc_fallback = 1.0;
};

struct DataSection {
  int n_clusters = 0;
  int dim = 0;
  int n_samples = 0;
  double spread = 0.0;
};

struct RunConfig {
  ModelSection model;
  swav::SwavConfig swav;
  OptimSection optim;
  DataSection data;

  int world_size = 1;
  int batch_per_rank = 1;
  long total_iters = 1;
  std::uint64_t seed = 0;
  long checkpoint_every = 0;  // 0: only the final checkpoint
  std::string checkpoint_dir;  // empty: no checkpoints at all
  std::optional<std::uint64_t> memory_budget_bytes;

  void validate() const;

  netspec::ModelSpec model_spec() const;
  engine::NetTopology topology() const;
  optim::LrSchedule schedule() const;
  optim::LarcConfig larc() const;

  // Canonical JSON form: every key present (budget only when set), sorted
  // keys, defaults filled in.
  nlohmann::json to_json() const;

  // FNV-1a 64 over the canonical dump, 16 lowercase hex digits. Two configs
  // hash equal iff they describe the same run.
  std::string config_hash() const;
};

// Small four-cluster run that trains in seconds on one desk machine.
RunConfig toy_default();

RunConfig from_json(const nlohmann::json& j);
RunConfig load_file(const std::filesystem::path& path);

}  // namespace shardtrain::runconfig
