// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace shardtrain::fabric {

// Execution modes share every line of rendezvous and reduction code and are
// required to produce bit-identical collective results and event logs.
//   sim:      one logical execution unit; workers run round-robin and hand
//             off at collective boundaries.
//   parallel: one OS thread per rank, rendezvous via mutex and condvar.
enum class Mode { sim, parallel };

Mode mode_from_env();  // SHARDTRAIN_MODE, defaults to sim

// One log row. Collectives contribute one row per rank with t_start equal to
// the collective's global sequence number; instantaneous per-rank markers
// carry t_start == t_End == the count of collectives completed before them.
struct Event {
  long step = 0;
  std::string op;
  int layer = -1;
  int rank = -1;
  double t_start = 0.0;
  double t_end = 0.0;
  std::size_t payload_len = 0;
  bool collective = false;
};

class World;

// Per-rank view of the fabric, valid only inside World::run. Collectives
// rendezvous on (step, op, layer, root, payload length); any disagreement
// between ranks poisons the collective for every participant.
class WorldHandle {
 public:
  int rank() const { return rank_; }
  int world_size() const;
  void set_step(long step) { step_ = step; }
  long step() const { return step_; }

  // Elementwise sum folded in ascending rank order.
  std::vector<double> all_reduce(std::span<const double> v, int layer = -1);
  // The same fold, then each rank keeps its own contiguous block; payload
  // length must be divisible by the world size (callers pad with zeros).
  std::vector<double> reduce_scatter(std::span<const double> v,
                                     int layer = -1);
  // Concatenation of equal-length shards in ascending rank order.
  std::vector<double> all_gather(std::span<const double> shard,
                                 int layer = -1);
  std::vector<double> broadcast(std::span<const double> v, int root,
                                int layer = -1);
  void barrier(int layer = -1);

  // Appends a per-rank marker row to the event log.
  void log_marker(const std::string& op, int layer);

 private:
  friend class World;
  WorldHandle(World* world, int rank) : world_(world), rank_(rank) {}
  World* world_;
  int rank_;
  long step_ = 0;
  std::uint64_t next_seq_ = 0;
};

// In-process SPMD fabric. run() executes one body per rank and rethrows the
// first worker error in rank order, preferring root-cause errors over the
// secondary deadlocks they produce.
class World {
 public:
  World(int world_size, Mode mode,
        std::chrono::milliseconds timeout = std::chrono::milliseconds(60000));

  World(const World&) = delete;
  World& operator=(const World&) = delete;

  void run(const std::function<void(WorldHandle&)>& body);

  int world_size() const { return n_; }
  Mode mode() const { return mode_; }

  // Deterministic merged log: collective rows in completion order with
  // per-rank markers interleaved at their logical times.
  std::vector<Event> events() const;
  std::string events_jsonl() const;

 private:
  friend class WorldHandle;

  enum class Op : int {
    all_reduce = 0,
    reduce_scatter = 1,
    all_gather = 2,
    broadcast = 3,
    barrier = 4,
  };
  static const char* op_name(Op op);

  struct Key {
    long step = 0;
    int op = 0;
    int layer = -1;
    int root = -1;
    std::size_t len = 0;
    bool operator==(const Key&) const = default;
  };

  struct Pending {
    bool key_set = false;
    Key key;
    std::vector<std::vector<double>> deposits;
    std::vector<char> deposited;
    int arrived = 0;
    int copied = 0;
    bool done = false;
    std::vector<double> result;
    std::exception_ptr poison;
  };

  std::vector<double> collective(WorldHandle& h, Op op, int layer, int root,
                                 std::span<const double> data);

  // All _locked helpers require mu_ to be held.
  bool runnable_locked(int rank) const;
  void advance_turn_locked(int from_rank);
  void check_stranded_locked();
  void fold_and_complete_locked(Pending& p);

  const int n_;
  const Mode mode_;
  const std::chrono::milliseconds timeout_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::uint64_t, Pending> pending_;
  std::vector<Event> collective_events_;
  std::vector<std::vector<Event>> marker_events_;
  std::uint64_t completed_count_ = 0;
  std::vector<char> finished_;
  int n_finished_ = 0;
  std::vector<long long> blocked_on_;
  int turn_ = 0;
};

}  // namespace shardtrain::fabric
