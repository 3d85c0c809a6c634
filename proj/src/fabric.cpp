// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#include "shardtrain/fabric.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <string_view>
#include <thread>

#include <json.hpp>

#include "shardtrain/errors.hpp"

namespace shardtrain::fabric {

Mode mode_from_env() {
  const char* v = std::getenv("SHARDTRAIN_MODE");
  if (v == nullptr || std::string_view(v).empty() ||
      std::string_view(v) == "sim") {
    return Mode::sim;
  }
  if (std::string_view(v) == "parallel") {
    return Mode::parallel;
  }
  throw ConfigError("SHARDTRAIN_MODE must be 'sim' or 'parallel', got '" +
                    std::string(v) + "'");
}

int WorldHandle::world_size() const { return world_->world_size(); }

std::vector<double> WorldHandle::all_reduce(std::span<const double> v,
                                            int layer) {
  return world_->collective(*this, World::Op::all_reduce, layer, -1, v);
}

std::vector<double> WorldHandle::reduce_scatter(std::span<const double> v,
                                                int layer) {
  if (v.size() % static_cast<std::size_t>(world_size()) != 0) {
    throw ProtocolError("reduce_scatter: payload length " +
                        std::to_string(v.size()) +
                        " not divisible by world size " +
                        std::to_string(world_size()));
  }
  return world_->collective(*this, World::Op::reduce_scatter, layer, -1, v);
}

std::vector<double> WorldHandle::all_gather(std::span<const double> shard,
                                            int layer) {
  return world_->collective(*this, World::Op::all_gather, layer, -1, shard);
}

std::vector<double> WorldHandle::broadcast(std::span<const double> v, int root,
                                           int layer) {
  if (root < 0 || root >= world_size()) {
    throw ProtocolError("broadcast: root " + std::to_string(root) +
                        " outside [0, " + std::to_string(world_size()) + ")");
  }
  return world_->collective(*this, World::Op::broadcast, layer, root, v);
}

void WorldHandle::barrier(int layer) {
  world_->collective(*this, World::Op::barrier, layer, -1, {});
}

void WorldHandle::log_marker(const std::string& op, int layer) {
  std::lock_guard<std::mutex> lk(world_->mu_);
  Event e;
  e.step = step_;
  e.op = op;
  e.layer = layer;
  e.rank = rank_;
  // Completed-collective count at the moment of logging. Every collective
  // needs this rank, so no further collective can complete before this rank
  // logs and moves on; the value is identical across execution modes.
  e.t_start = static_cast<double>(world_->completed_count_);
  e.t_end = e.t_start;
  e.collective = false;
  world_->marker_events_[rank_].push_back(e);
}

const char* World::op_name(Op op) {
  switch (op) {
    case Op::all_reduce:
      return "all_reduce";
    case Op::reduce_scatter:
      return "reduce_scatter";
    case Op::all_gather:
      return "all_gather";
    case Op::broadcast:
      return "broadcast";
    case Op::barrier:
      return "barrier";
  }
  return "unknown";
}

namespace {

std::string describe(long step, int op_code, int layer, std::size_t len) {
  std::ostringstream os;
  os << "op=" << op_code << " step=" << step << " layer=" << layer
     << " len=" << len;
  return os.str();
}

}  // namespace

World::World(int world_size, Mode mode, std::chrono::milliseconds timeout)
    : n_(world_size), mode_(mode), timeout_(timeout) {
  if (world_size < 1) {
    throw ConfigError("world_size must be at least 1");
  }
  marker_events_.resize(static_cast<std::size_t>(world_size));
  finished_.assign(static_cast<std::size_t>(world_size), 0);
  blocked_on_.assign(static_cast<std::size_t>(world_size), -1);
}

bool World::runnable_locked(int rank) const {
  if (finished_[static_cast<std::size_t>(rank)]) {
    return false;
  }
  long long b = blocked_on_[static_cast<std::size_t>(rank)];
  if (b < 0) {
    return true;
  }
  auto it = pending_.find(static_cast<std::uint64_t>(b));
  if (it == pending_.end()) {
    return true;
  }
  return it->second.done || it->second.poison != nullptr;
}

void World::advance_turn_locked(int from_rank) {
  if (n_finished_ == n_) {
    return;
  }
  for (int i = 1; i <= n_; ++i) {
    int c = (from_rank + i) % n_;
    if (runnable_locked(c)) {
      turn_ = c;
      return;
    }
  }
  // Every unfinished rank is parked on a collective that cannot complete
  // without one of the parked ranks: structural deadlock.
  for (auto& [seq, p] : pending_) {
    if (!p.done && p.poison == nullptr) {
      p.poison = std::make_exception_ptr(DeadlockError(
          "no runnable rank; collective stuck: " +
          describe(p.key.step, p.key.op, p.key.layer, p.key.len)));
    }
  }
  for (int i = 1; i <= n_; ++i) {
    int c = (from_rank + i) % n_;
    if (runnable_locked(c)) {
      turn_ = c;
      return;
    }
  }
}

void World::check_stranded_locked() {
  for (auto& [seq, p] : pending_) {
    if (p.done || p.poison != nullptr) {
      continue;
    }
    int missing = n_ - p.arrived;
    int available = 0;
    for (int r = 0; r < n_; ++r) {
      if (!finished_[static_cast<std::size_t>(r)] &&
          !p.deposited[static_cast<std::size_t>(r)]) {
        ++available;
      }
    }
    if (available < missing) {
      p.poison = std::make_exception_ptr(DeadlockError(
          "collective can never complete, a participant already finished: " +
          describe(p.key.step, p.key.op, p.key.layer, p.key.len)));
    }
  }
}

void World::fold_and_complete_locked(Pending& p) {
  const Op op = static_cast<Op>(p.key.op);
  const std::size_t len = p.key.len;
  switch (op) {
    case Op::all_reduce:
    case Op::reduce_scatter: {
      p.result.assign(len, 0.0);
      for (std::size_t i = 0; i < len; ++i) {
        double acc = p.deposits[0][i];
        for (int r = 1; r < n_; ++r) {
          acc += p.deposits[static_cast<std::size_t>(r)][i];
        }
        p.result[i] = acc;
      }
      break;
    }
    case Op::all_gather: {
      p.result.clear();
      p.result.reserve(len * static_cast<std::size_t>(n_));
      for (int r = 0; r < n_; ++r) {
        const auto& d = p.deposits[static_cast<std::size_t>(r)];
        p.result.insert(p.result.end(), d.begin(), d.end());
      }
      break;
    }
    case Op::broadcast: {
      p.result = p.deposits[static_cast<std::size_t>(p.key.root)];
      break;
    }
    case Op::barrier: {
      p.result.clear();
      break;
    }
  }
  const double t0 = static_cast<double>(completed_count_);
  for (int r = 0; r < n_; ++r) {
    Event e;
    e.step = p.key.step;
    e.op = op_name(op);
    e.layer = p.key.layer;
    e.rank = r;
    e.t_start = t0;
    e.t_end = t0 + 1.0;
    e.payload_len = len;
    e.collective = true;
    collective_events_.push_back(std::move(e));
  }
  ++completed_count_;
  p.done = true;
}

std::vector<double> World::collective(WorldHandle& h, Op op, int layer,
                                      int root,
                                      std::span<const double> data) {
  const std::uint64_t seq = h.next_seq_++;
  const Key key{h.step_, static_cast<int>(op), layer, root, data.size()};
  const int rank = h.rank_;

  std::unique_lock<std::mutex> lk(mu_);
  Pending& p = pending_[seq];
  if (p.deposits.empty() && p.deposited.empty()) {
    p.deposits.resize(static_cast<std::size_t>(n_));
    p.deposited.assign(static_cast<std::size_t>(n_), 0);
  }
  if (p.poison != nullptr) {
    std::exception_ptr err = p.poison;
    std::rethrow_exception(err);
  }
  if (!p.key_set) {
    p.key = key;
    p.key_set = true;
  } else if (!(p.key == key)) {
    std::ostringstream msg;
    msg << "collective rendezvous mismatch: rank " << rank << " brought {"
        << describe(key.step, key.op, key.layer, key.len)
        << "} where the group already agreed on {"
        << describe(p.key.step, p.key.op, p.key.layer, p.key.len) << "}";
    p.poison = std::make_exception_ptr(ProtocolError(msg.str()));
    cv_.notify_all();
    std::exception_ptr err = p.poison;
    std::rethrow_exception(err);
  }

  p.deposits[static_cast<std::size_t>(rank)].assign(data.begin(), data.end());
  p.deposited[static_cast<std::size_t>(rank)] = 1;
  ++p.arrived;

  if (p.arrived == n_) {
    fold_and_complete_locked(p);
    cv_.notify_all();
  } else {
    blocked_on_[static_cast<std::size_t>(rank)] = static_cast<long long>(seq);
    if (mode_ == Mode::sim) {
      advance_turn_locked(rank);
      cv_.notify_all();
      cv_.wait(lk, [&] {
        return (p.done || p.poison != nullptr) && turn_ == rank;
      });
    } else {
      const auto deadline = std::chrono::steady_clock::now() + timeout_;
      bool woke = cv_.wait_until(lk, deadline, [&] {
        return p.done || p.poison != nullptr;
      });
      if (!woke) {
        p.poison = std::make_exception_ptr(DeadlockError(
            "collective timed out: " +
            describe(key.step, key.op, key.layer, key.len)));
        cv_.notify_all();
      }
    }
    blocked_on_[static_cast<std::size_t>(rank)] = -1;
  }

  if (p.poison != nullptr) {
    std::exception_ptr err = p.poison;
    std::rethrow_exception(err);
  }

  std::vector<double> out;
  switch (op) {
    case Op::all_reduce:
    case Op::all_gather:
    case Op::broadcast:
      out = p.result;
      break;
    case Op::reduce_scatter: {
      const std::size_t chunk = p.key.len / static_cast<std::size_t>(n_);
      const std::size_t lo = static_cast<std::size_t>(rank) * chunk;
      out.assign(p.result.begin() + static_cast<std::ptrdiff_t>(lo),
                 p.result.begin() + static_cast<std::ptrdiff_t>(lo + chunk));
      break;
    }
    case Op::barrier:
      break;
  }
  ++p.copied;
  if (p.copied == n_) {
    pending_.erase(seq);
  }
  return out;
}

void World::run(const std::function<void(WorldHandle&)>& body) {
  {
    std::lock_guard<std::mutex> lk(mu_);
    finished_.assign(static_cast<std::size_t>(n_), 0);
    blocked_on_.assign(static_cast<std::size_t>(n_), -1);
    n_finished_ = 0;
    turn_ = 0;
  }

  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(n_));
  for (int r = 0; r < n_; ++r) {
    threads.emplace_back([this, r, &body, &errors] {
      WorldHandle h(this, r);
      try {
        if (mode_ == Mode::sim) {
          std::unique_lock<std::mutex> lk(mu_);
          cv_.wait(lk, [&] { return turn_ == r; });
        }
        body(h);
      } catch (...) {
        errors[static_cast<std::size_t>(r)] = std::current_exception();
      }
      {
        std::lock_guard<std::mutex> lk(mu_);
        finished_[static_cast<std::size_t>(r)] = 1;
        ++n_finished_;
        check_stranded_locked();
        if (mode_ == Mode::sim && n_finished_ < n_) {
          advance_turn_locked(r);
        }
        cv_.notify_all();
      }
    });
  }
  for (auto& t : threads) {
    t.join();
  }

  // Prefer the root cause: a deadlock raised on rank k is usually collateral
  // damage from a protocol error or body failure on another rank.
  std::exception_ptr pick;
  for (const auto& err : errors) {
    if (!err) {
      continue;
    }
    bool is_deadlock = false;
    try {
      std::rethrow_exception(err);
    } catch (const DeadlockError&) {
      is_deadlock = true;
    } catch (...) {
    }
    if (!is_deadlock) {
      pick = err;
      break;
    }
    if (!pick) {
      pick = err;
    }
  }
  if (pick) {
    std::rethrow_exception(pick);
  }
}

std::vector<Event> World::events() const {
  std::lock_guard<std::mutex> lk(mu_);
  std::vector<Event> merged = collective_events_;
  for (const auto& per_rank : marker_events_) {
    merged.insert(merged.end(), per_rank.begin(), per_rank.end());
  }
  std::stable_sort(merged.begin(), merged.end(),
                   [](const Event& a, const Event& b) {
                     if (a.t_start != b.t_start) {
                       return a.t_start < b.t_start;
                     }
                     // A marker logged at count c precedes the collective
                     // whose sequence number is c.
                     if (a.collective != b.collective) {
                       return !a.collective;
                     }
                     return a.rank < b.rank;
                   });
  return merged;
}

std::string World::events_jsonl() const {
  std::string out;
  for (const Event& e : events()) {
    nlohmann::json row;
    row["step"] = e.step;
    row["op"] = e.op;
    row["layer"] = e.layer;
    row["rank"] = e.rank;
    row["t_start"] = e.t_start;
    row["t_end"] = e.t_end;
    out += row.dump();
    out += '\n';
  }
  return out;
}

}  // namespace shardtrain::fabric
