// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "shardtrain/engine.hpp"
#include "shardtrain/fsdp.hpp"

namespace shardtrain::ckptstore {

// Two persisted layouts, both little-endian with float64 payloads:
//
// Sharded ("SEERSHRD"): one file per rank. After the header, two records per
// parameter slot (weights then optimizer momentum), each carrying the slot
// id, kind, the unpadded full length, this rank's offset and padded shard
// length, then the padded shard payload. Shard padding is stored.
//
// Sliced ("SEERSLCE"): one file per (slot, kind) holding the full unpadded
// vector, independent of any world size. Padding is never stored.
//
// A rank-0 metadata JSON sits next to the binaries and carries the step,
// seed and config hash needed for exact resume.

struct StepInfo {
  long step = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

std::string shard_file_name(int rank, int world_size);
std::string slice_file_name(std::size_t slot, bool momentum);

// Writes this rank's shard file; rank 0 also writes metadata.json.
void save_sharded(const fsdp::ShardedState& state, const StepInfo& info,
                  const std::filesystem::path& dir);

struct LoadedShards {
  fsdp::ShardedState state;
  StepInfo info;
};

// Requires the checkpoint's world size to equal world_size; a different one
// raises WorldMismatchError naming both (reshard offline instead).
LoadedShards load_sharded(const std::filesystem::path& dir, int rank,
                          int world_size, const engine::NetTopology& topo);

// Offline resharding. Streams slot by slot: peak memory is one full slot
// plus one shard.
void consolidate_to_sliced(const std::filesystem::path& shard_dir,
                           const std::filesystem::path& out_dir);
void slices_to_shards(const std::filesystem::path& slice_dir,
                      const std::filesystem::path& out_dir, int world_size);

// Builds one rank's shard state straight from a sliced checkpoint at any
// world size.
LoadedShards load_from_sliced(const std::filesystem::path& slice_dir,
                              int rank, int world_size,
                              const engine::NetTopology& topo);

// Full dense state from a sliced checkpoint (for probes and tools).
fsdp::DenseTrainState dense_from_sliced(const std::filesystem::path& dir,
                                        const engine::NetTopology& topo,
                                        StepInfo* info_out = nullptr);

}  // namespace shardtrain::ckptstore
