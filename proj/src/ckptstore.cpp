// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#include "shardtrain/ckptstore.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <vector>

#include <json.hpp>

#include "shardtrain/errors.hpp"

namespace shardtrain::ckptstore {

namespace {

constexpr char kShardMagic[8] = {'S', 'E', 'E', 'R', 'S', 'H', 'R', 'D'};
constexpr char kSliceMagic[8] = {'S', 'E', 'E', 'R', 'S', 'L', 'C', 'E'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

void put_f64(std::string& buf, double d) {
  put_u64(buf, std::bit_cast<std::uint64_t>(d));
}

class Reader {
 public:
  Reader(const std::filesystem::path& path) : path_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      throw IoError("cannot open " + path_);
    }
    data_.assign(std::istreambuf_iterator<char>(in),
                 std::istreambuf_iterator<char>());
  }

  void expect_magic(const char (&magic)[8]) {
    if (data_.size() < 8 ||
        !std::equal(magic, magic + 8, data_.begin())) {
      throw FormatError(path_ + ": bad magic");
    }
    pos_ = 8;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }

  std::vector<double> f64_block(std::uint64_t count) {
    std::vector<double> out(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      out[i] = std::bit_cast<double>(u64());
    }
    return out;
  }

  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > data_.size()) {
      throw FormatError(path_ + ": truncated file");
    }
  }

  std::string path_;
  std::string data_;
  std::size_t pos_ = 0;
};

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot create " + path.string());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

nlohmann::json info_to_json(const StepInfo& info) {
  nlohmann::json j;
  j["step"] = info.step;
  j["seed"] = info.seed;
  j["config_hash"] = info.config_hash;
  return j;
}

StepInfo info_from_json(const nlohmann::json& j,
                        const std::filesystem::path& path) {
  StepInfo info;
  try {
    info.step = j.at("step").get<long>();
    info.seed = j.at("seed").get<std::uint64_t>();
    info.config_hash = j.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad metadata: " + e.what());
  }
  return info;
}

nlohmann::json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": invalid JSON: " + e.what());
  }
  return j;
}

struct ShardRecord {
  std::uint32_t slot = 0;
  std::uint8_t kind = 0;  // 0 weights, 1 momentum
  std::uint64_t full_length = 0;
  std::uint64_t shard_offset = 0;
  std::uint64_t shard_length = 0;
  std::vector<double> payload;
};

struct ShardFile {
  std::uint32_t rank = 0;
  std::uint32_t world = 0;
  std::vector<ShardRecord> records;
};

ShardFile read_shard_file(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic(kShardMagic);
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw FormatError(path.string() + ": unsupported version " +
                      std::to_string(version));
  }
  ShardFile f;
  f.rank = r.u32();
  f.world = r.u32();
  const std::uint32_t n_slots = r.u32();
  f.records.reserve(2 * n_slots);
  for (std::uint32_t s = 0; s < n_slots; ++s) {
    for (int kind = 0; kind < 2; ++kind) {
      ShardRecord rec;
      rec.slot = r.u32();
      rec.kind = r.u8();
      rec.full_length = r.u64();
      rec.shard_offset = r.u64();
      rec.shard_length = r.u64();
      if (rec.slot != s || rec.kind != kind) {
        throw FormatError(path.string() + ": records out of order");
      }
      rec.payload = r.f64_block(rec.shard_length);
      f.records.push_back(std::move(rec));
    }
  }
  if (!r.at_end()) {
    throw FormatError(path.string() + ": trailing bytes");
  }
  return f;
}

std::string encode_shard_file(const fsdp::ShardedState& state) {
  std::string buf;
  buf.append(kShardMagic, 8);
  put_u32(buf, kFormatVersion);
  put_u32(buf, static_cast<std::uint32_t>(state.rank));
  put_u32(buf, static_cast<std::uint32_t>(state.world_size));
  put_u32(buf, static_cast<std::uint32_t>(state.slots.size()));
  for (std::size_t s = 0; s < state.slots.size(); ++s) {
    const fsdp::SlotShard& shard = state.slots[s];
    const std::uint64_t sl = shard.weights.size();
    for (int kind = 0; kind < 2; ++kind) {
      put_u32(buf, static_cast<std::uint32_t>(s));
      buf.push_back(static_cast<char>(kind));
      put_u64(buf, shard.full_length);
      put_u64(buf, static_cast<std::uint64_t>(state.rank) * sl);
      put_u64(buf, sl);
      const std::vector<double>& payload =
          kind == 0 ? shard.weights : shard.momentum;
      for (double d : payload) {
        put_f64(buf, d);
      }
    }
  }
  return buf;
}

void check_topology(const engine::NetTopology& topo, std::size_t slot,
                    std::uint64_t full_length,
                    const std::filesystem::path& where) {
  if (slot >= topo.n_slots()) {
    throw FormatError(where.string() + ": slot " + std::to_string(slot) +
                      " outside the configured network");
  }
  if (full_length != topo.slot_param_count(slot)) {
    throw FormatError(where.string() + ": slot " + std::to_string(slot) +
                      " holds " + std::to_string(full_length) +
                      " parameters but the configured network expects " +
                      std::to_string(topo.slot_param_count(slot)));
  }
}

}  // namespace

std::string shard_file_name(int rank, int world_size) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "shard_%05d_of_%05d.bin", rank, world_size);
  return buf;
}

std::string slice_file_name(std::size_t slot, bool momentum) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "slice_s%04zu_%s.bin", slot,
                momentum ? "momentum" : "weights");
  return buf;
}

void save_sharded(const fsdp::ShardedState& state, const StepInfo& info,
                  const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create directory " + dir.string());
  }
  write_file(dir / shard_file_name(state.rank, state.world_size),
             encode_shard_file(state));
  if (state.rank == 0) {
    nlohmann::json meta = info_to_json(info);
    meta["format"] = "shardtrain-sharded";
    meta["version"] = kFormatVersion;
    meta["world_size"] = state.world_size;
    nlohmann::json files = nlohmann::json::array();
    for (int r = 0; r < state.world_size; ++r) {
      files.push_back(shard_file_name(r, state.world_size));
    }
    meta["files"] = files;
    write_file(dir / "metadata.json", meta.dump(2) + "\n");
  }
}

LoadedShards load_sharded(const std::filesystem::path& dir, int rank,
                          int world_size, const engine::NetTopology& topo) {
  const auto meta_path = dir / "metadata.json";
  nlohmann::json meta = load_json(meta_path);
  if (meta.value("format", "") != "shardtrain-sharded") {
    throw FormatError(meta_path.string() + ": not a sharded checkpoint");
  }
  const int stored_world = meta.value("world_size", -1);
  if (stored_world != world_size) {
    throw WorldMismatchError(
        "checkpoint in " + dir.string() + " was written at world size " +
        std::to_string(stored_world) + " but world size " +
        std::to_string(world_size) +
        " was requested; reshard it offline first");
  }
  if (rank < 0 || rank >= world_size) {
    throw ConfigError("load_sharded: rank outside [0, world_size)");
  }

  ShardFile f = read_shard_file(dir / shard_file_name(rank, world_size));
  if (static_cast<int>(f.rank) != rank ||
      static_cast<int>(f.world) != world_size) {
    throw FormatError("shard file disagrees with its name about rank or "
                      "world size");
  }
  if (f.records.size() != 2 * topo.n_slots()) {
    throw FormatError("shard file holds " +
                      std::to_string(f.records.size() / 2) +
                      " slots but the configured network has " +
                      std::to_string(topo.n_slots()));
  }

  LoadedShards out;
  out.info = info_from_json(meta, meta_path);
  out.state.topo = topo;
  out.state.rank = rank;
  out.state.world_size = world_size;
  out.state.slots.resize(topo.n_slots());
  for (std::size_t s = 0; s < topo.n_slots(); ++s) {
    const ShardRecord& wrec = f.records[2 * s];
    const ShardRecord& mrec = f.records[2 * s + 1];
    check_topology(topo, s, wrec.full_length, dir);
    const std::size_t sl =
        fsdp::padded_shard_len(wrec.full_length, world_size);
    if (wrec.shard_length != sl || mrec.shard_length != sl ||
        wrec.shard_offset != static_cast<std::uint64_t>(rank) * sl ||
        mrec.full_length != wrec.full_length) {
      throw FormatError("shard record geometry is inconsistent at slot " +
                        std::to_string(s));
    }
    fsdp::SlotShard& shard = out.state.slots[s];
    shard.full_length = wrec.full_length;
    shard.weights = wrec.payload;
    shard.momentum = mrec.payload;
  }
  return out;
}

void consolidate_to_sliced(const std::filesystem::path& shard_dir,
                           const std::filesystem::path& out_dir) {
  const auto meta_path = shard_dir / "metadata.json";
  nlohmann::json meta = load_json(meta_path);
  if (meta.value("format", "") != "shardtrain-sharded") {
    throw FormatError(meta_path.string() + ": not a sharded checkpoint");
  }
  const int world = meta.value("world_size", -1);
  if (world < 1) {
    throw FormatError(meta_path.string() + ": bad world_size");
  }
  StepInfo info = info_from_json(meta, meta_path);

  std::vector<ShardFile> files;
  files.reserve(static_cast<std::size_t>(world));
  for (int r = 0; r < world; ++r) {
    files.push_back(read_shard_file(shard_dir / shard_file_name(r, world)));
    if (static_cast<int>(files.back().rank) != r ||
        static_cast<int>(files.back().world) != world) {
      throw FormatError("shard file for rank " + std::to_string(r) +
                        " carries wrong identity");
    }
    if (files.back().records.size() != files[0].records.size()) {
      throw FormatError("shard files disagree on record count");
    }
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw IoError("cannot create directory " + out_dir.string());
  }

  const std::size_t n_slots = files[0].records.size() / 2;
  nlohmann::json slots_json = nlohmann::json::array();
  nlohmann::json files_json = nlohmann::json::array();
  for (std::size_t s = 0; s < n_slots; ++s) {
    for (int kind = 0; kind < 2; ++kind) {
      const std::uint64_t full = files[0].records[2 * s + kind].full_length;
      std::string buf;
      buf.append(kSliceMagic, 8);
      put_u32(buf, kFormatVersion);
      put_u32(buf, static_cast<std::uint32_t>(s));
      buf.push_back(static_cast<char>(kind));
      put_u64(buf, full);
      std::uint64_t written = 0;
      for (int r = 0; r < world; ++r) {
        const ShardRecord& rec =
            files[static_cast<std::size_t>(r)].records[2 * s + kind];
        if (rec.full_length != full) {
          throw FormatError("shard files disagree on slot " +
                            std::to_string(s) + " length");
        }
        for (std::size_t i = 0;
             i < rec.payload.size() && written < full; ++i, ++written) {
          put_f64(buf, rec.payload[i]);
        }
      }
      if (written != full) {
        throw FormatError("shards cover only " + std::to_string(written) +
                          " of " + std::to_string(full) +
                          " parameters at slot " + std::to_string(s));
      }
      const std::string name = slice_file_name(s, kind == 1);
      write_file(out_dir / name, buf);
      files_json.push_back(name);
      if (kind == 0) {
        nlohmann::json sj;
        sj["id"] = s;
        sj["full_length"] = full;
        slots_json.push_back(sj);
      }
    }
  }

  nlohmann::json out_meta = info_to_json(info);
  out_meta["format"] = "shardtrain-sliced";
  out_meta["version"] = kFormatVersion;
  out_meta["slots"] = slots_json;
  out_meta["files"] = files_json;
  write_file(out_dir / "slices_metadata.json", out_meta.dump(2) + "\n");
}

namespace {

struct SlicedCheckpoint {
  StepInfo info;
  // [slot][kind] payloads, kind 0 weights, 1 momentum.
  std::vector<std::array<std::vector<double>, 2>> slots;
};

SlicedCheckpoint read_sliced(const std::filesystem::path& dir) {
  const auto meta_path = dir / "slices_metadata.json";
  nlohmann::json meta = load_json(meta_path);
  if (meta.value("format", "") != "shardtrain-sliced") {
    throw FormatError(meta_path.string() + ": not a sliced checkpoint");
  }
  SlicedCheckpoint ck;
  ck.info = info_from_json(meta, meta_path);
  if (!meta.contains("slots") || !meta["slots"].is_array()) {
    throw FormatError(meta_path.string() + ": missing slot table");
  }
  const std::size_t n_slots = meta["slots"].size();
  ck.slots.resize(n_slots);
  for (std::size_t s = 0; s < n_slots; ++s) {
    for (int kind = 0; kind < 2; ++kind) {
      Reader r(dir / slice_file_name(s, kind == 1));
      r.expect_magic(kSliceMagic);
      const std::uint32_t version = r.u32();
      if (version != kFormatVersion) {
        throw FormatError("unsupported slice version " +
                          std::to_string(version));
      }
      const std::uint32_t slot_id = r.u32();
      const std::uint8_t k = r.u8();
      const std::uint64_t full = r.u64();
      if (slot_id != s || k != kind) {
        throw FormatError("slice file identity mismatch at slot " +
                          std::to_string(s));
      }
      ck.slots[s][static_cast<std::size_t>(kind)] = r.f64_block(full);
      if (!r.at_end()) {
        throw FormatError("slice file has trailing bytes at slot " +
                          std::to_string(s));
      }
    }
    if (ck.slots[s][0].size() != ck.slots[s][1].size()) {
      throw FormatError("weights and momentum slices disagree at slot " +
                        std::to_string(s));
    }
  }
  return ck;
}

}  // namespace

void slices_to_shards(const std::filesystem::path& slice_dir,
                      const std::filesystem::path& out_dir, int world_size) {
  if (world_size < 1) {
    throw ConfigError("slices_to_shards: world_size must be at least 1");
  }
  SlicedCheckpoint ck = read_sliced(slice_dir);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw IoError("cannot create directory " + out_dir.string());
  }

  for (int rank = 0; rank < world_size; ++rank) {
    std::string buf;
    buf.append(kShardMagic, 8);
    put_u32(buf, kFormatVersion);
    put_u32(buf, static_cast<std::uint32_t>(rank));
    put_u32(buf, static_cast<std::uint32_t>(world_size));
    put_u32(buf, static_cast<std::uint32_t>(ck.slots.size()));
    for (std::size_t s = 0; s < ck.slots.size(); ++s) {
      const std::uint64_t full = ck.slots[s][0].size();
      const std::size_t sl = fsdp::padded_shard_len(full, world_size);
      for (int kind = 0; kind < 2; ++kind) {
        put_u32(buf, static_cast<std::uint32_t>(s));
        buf.push_back(static_cast<char>(kind));
        put_u64(buf, full);
        put_u64(buf, static_cast<std::uint64_t>(rank) * sl);
        put_u64(buf, sl);
        const std::vector<double>& payload =
            ck.slots[s][static_cast<std::size_t>(kind)];
        const std::size_t lo = static_cast<std::size_t>(rank) * sl;
        for (std::size_t i = 0; i < sl; ++i) {
          put_f64(buf, lo + i < payload.size() ? payload[lo + i] : 0.0);
        }
      }
    }
    write_file(out_dir / shard_file_name(rank, world_size), buf);
  }

  nlohmann::json meta = info_to_json(ck.info);
  meta["format"] = "shardtrain-sharded";
  meta["version"] = kFormatVersion;
  meta["world_size"] = world_size;
  nlohmann::json files = nlohmann::json::array();
  for (int r = 0; r < world_size; ++r) {
    files.push_back(shard_file_name(r, world_size));
  }
  meta["files"] = files;
  write_file(out_dir / "metadata.json", meta.dump(2) + "\n");
}

LoadedShards load_from_sliced(const std::filesystem::path& slice_dir,
                              int rank, int world_size,
                              const engine::NetTopology& topo) {
  if (world_size < 1 || rank < 0 || rank >= world_size) {
    throw ConfigError("load_from_sliced: bad rank or world size");
  }
  SlicedCheckpoint ck = read_sliced(slice_dir);
  if (ck.slots.size() != topo.n_slots()) {
    throw FormatError("sliced checkpoint holds " +
                      std::to_string(ck.slots.size()) +
                      " slots but the configured network has " +
                      std::to_string(topo.n_slots()));
  }
  LoadedShards out;
  out.info = ck.info;
  out.state.topo = topo;
  out.state.rank = rank;
  out.state.world_size = world_size;
  out.state.slots.resize(topo.n_slots());
  for (std::size_t s = 0; s < topo.n_slots(); ++s) {
    check_topology(topo, s, ck.slots[s][0].size(), slice_dir);
    const std::size_t full = ck.slots[s][0].size();
    const std::size_t sl = fsdp::padded_shard_len(full, world_size);
    const std::size_t lo = static_cast<std::size_t>(rank) * sl;
    fsdp::SlotShard& shard = out.state.slots[s];
    shard.full_length = full;
    shard.weights.assign(sl, 0.0);
    shard.momentum.assign(sl, 0.0);
    for (std::size_t i = 0; i < sl && lo + i < full; ++i) {
      shard.weights[i] = ck.slots[s][0][lo + i];
      shard.momentum[i] = ck.slots[s][1][lo + i];
    }
  }
  return out;
}

fsdp::DenseTrainState dense_from_sliced(const std::filesystem::path& dir,
                                        const engine::NetTopology& topo,
                                        StepInfo* info_out) {
  SlicedCheckpoint ck = read_sliced(dir);
  if (ck.slots.size() != topo.n_slots()) {
    throw FormatError("sliced checkpoint holds " +
                      std::to_string(ck.slots.size()) +
                      " slots but the configured network has " +
                      std::to_string(topo.n_slots()));
  }
  fsdp::DenseTrainState st;
  st.net.topo = topo;
  st.net.params.resize(topo.n_slots());
  st.momentum.resize(topo.n_slots());
  for (std::size_t s = 0; s < topo.n_slots(); ++s) {
    check_topology(topo, s, ck.slots[s][0].size(), dir);
    st.net.params[s] = std::move(ck.slots[s][0]);
    st.momentum[s] = std::move(ck.slots[s][1]);
  }
  if (info_out != nullptr) {
    *info_out = ck.info;
  }
  return st;
}

}  // namespace shardtrain::ckptstore
