// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <string>
#include <vector>

#include "shardtrain/errors.hpp"
#include "shardtrain/fabric.hpp"
#include "shardtrain/rng.hpp"

using namespace shardtrain;
using fabric::Mode;
using fabric::World;
using fabric::WorldHandle;

namespace {

struct RankOutputs {
  std::vector<double> ar, ag, bc, rs;
};

// A fixed collective sequence exercised identically under both modes.
void run_mixed_body(WorldHandle& h, std::vector<RankOutputs>& out) {
  const int r = h.rank();
  const int w = h.world_size();
  h.set_step(5);
  std::vector<double> v{static_cast<double>(r + 1), 0.5 * r};
  out[r].ar = h.all_reduce(v, /*layer=*/2);
  h.log_marker("phase", 2);
  std::vector<double> shard{static_cast<double>(r), r + 0.5};
  out[r].ag = h.all_gather(shard, /*layer=*/1);
  std::vector<double> payload{100.0 + r, 200.0 + r, 300.0 + r};
  out[r].bc = h.broadcast(payload, /*root=*/w - 1, /*layer=*/-1);
  std::vector<double> big(static_cast<std::size_t>(3 * w));
  for (std::size_t i = 0; i < big.size(); ++i) {
    big[i] = 0.25 * static_cast<double>(i) + r;
  }
  out[r].rs = h.reduce_scatter(big, /*layer=*/0);
  h.barrier();
}

}  // namespace

TEST_CASE("sim and parallel modes produce identical results and logs") {
  const int w = 4;
  std::vector<RankOutputs> sim_out(w), par_out(w);

  World sim(w, Mode::sim);
  sim.run([&](WorldHandle& h) { run_mixed_body(h, sim_out); });

  World par(w, Mode::parallel);
  par.run([&](WorldHandle& h) { run_mixed_body(h, par_out); });

  for (int r = 0; r < w; ++r) {
    CHECK(sim_out[r].ar == par_out[r].ar);
    CHECK(sim_out[r].ag == par_out[r].ag);
    CHECK(sim_out[r].bc == par_out[r].bc);
    CHECK(sim_out[r].rs == par_out[r].rs);
  }
  CHECK(sim.events_jsonl() == par.events_jsonl());
  CHECK(!sim.events_jsonl().empty());
}

TEST_CASE("all_reduce folds deposits in ascending rank order") {
  // (1e16 + 1) - 1e16 + 1 = 1 under the fixed fold; other orders give 2.
  const std::vector<double> deposits{1e16, 1.0, -1e16, 1.0};
  for (Mode mode : {Mode::sim, Mode::parallel}) {
    std::vector<double> results(4, 0.0);
    World world(4, mode);
    world.run([&](WorldHandle& h) {
      std::vector<double> v{deposits[static_cast<std::size_t>(h.rank())]};
      results[h.rank()] = h.all_reduce(v)[0];
    });
    for (double x : results) {
      CHECK(x == 1.0);
    }
  }
}

TEST_CASE("reduce_scatter equals the matching all_reduce slice") {
  const int w = 4;
  Rng rng(mix_key({31, 7}));
  std::vector<std::vector<double>> payload(w);
  for (auto& v : payload) {
    v.resize(3 * w);
    for (double& x : v) {
      x = rng.gaussian();
    }
  }
  std::vector<std::vector<double>> rs(w), ar(w);
  World world(w, Mode::parallel);
  world.run([&](WorldHandle& h) {
    const auto& mine = payload[static_cast<std::size_t>(h.rank())];
    rs[h.rank()] = h.reduce_scatter(mine, 1);
    ar[h.rank()] = h.all_reduce(mine, 2);
  });
  for (int r = 0; r < w; ++r) {
    REQUIRE(rs[r].size() == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(rs[r][static_cast<std::size_t>(i)] ==
            ar[r][static_cast<std::size_t>(3 * r + i)]);
    }
  }
}

TEST_CASE("all_gather concatenates shards by rank and broadcast copies root") {
  World world(3, Mode::sim);
  std::vector<std::vector<double>> ag(3), bc(3);
  world.run([&](WorldHandle& h) {
    std::vector<double> shard{static_cast<double>(h.rank()) * 10.0};
    ag[h.rank()] = h.all_gather(shard);
    std::vector<double> v{static_cast<double>(h.rank())};
    bc[h.rank()] = h.broadcast(v, 1);
  });
  for (int r = 0; r < 3; ++r) {
    CHECK(ag[r] == std::vector<double>{0.0, 10.0, 20.0});
    CHECK(bc[r] == std::vector<double>{1.0});
  }
}

TEST_CASE("rendezvous key mismatches poison the collective") {
  for (Mode mode : {Mode::sim, Mode::parallel}) {
    World world(2, mode, std::chrono::milliseconds(5000));
    CHECK_THROWS_WITH_AS(
        world.run([&](WorldHandle& h) {
          std::vector<double> v{1.0, 2.0};
          if (h.rank() == 0) {
            h.all_reduce(v);
          } else {
            h.all_gather(v);
          }
        }),
        doctest::Contains("rendezvous mismatch"), ProtocolError);
  }
}

TEST_CASE("payload length disagreements poison the collective") {
  World world(2, Mode::sim);
  CHECK_THROWS_AS(world.run([&](WorldHandle& h) {
    std::vector<double> v(h.rank() == 0 ? 2 : 3, 1.0);
    h.all_reduce(v);
  }),
                  ProtocolError);
}

TEST_CASE("a rank that exits early deadlocks the stragglers") {
  for (Mode mode : {Mode::sim, Mode::parallel}) {
    World world(2, mode, std::chrono::milliseconds(2000));
    CHECK_THROWS_AS(world.run([&](WorldHandle& h) {
      if (h.rank() == 0) {
        h.barrier();
      }
    }),
                    DeadlockError);
  }
}

TEST_CASE("root-cause errors beat the secondary deadlocks they cause") {
  for (Mode mode : {Mode::sim, Mode::parallel}) {
    World world(2, mode, std::chrono::milliseconds(2000));
    CHECK_THROWS_WITH_AS(world.run([&](WorldHandle& h) {
      if (h.rank() == 1) {
        throw NumericError("rank 1 exploded");
      }
      h.barrier();
    }),
                         "rank 1 exploded", NumericError);
  }
}

TEST_CASE("malformed collective arguments throw before rendezvous") {
  World world(2, Mode::sim);
  CHECK_THROWS_AS(world.run([&](WorldHandle& h) {
    std::vector<double> v(3, 1.0);  // not divisible by world size
    h.reduce_scatter(v);
  }),
                  ProtocolError);

  World world2(2, Mode::sim);
  CHECK_THROWS_AS(world2.run([&](WorldHandle& h) {
    std::vector<double> v{1.0};
    h.broadcast(v, 7);
  }),
                  ProtocolError);
}

TEST_CASE("event log carries steps, sequence times and payload lengths") {
  World world(2, Mode::sim);
  world.run([&](WorldHandle& h) {
    h.set_step(3);
    std::vector<double> v{1.0, 2.0, 3.0};
    h.all_reduce(v, 7);
    h.log_marker("between", 7);
    h.all_gather(v, 8);
    h.barrier();
  });
  const auto events = world.events();
  // 3 collectives x 2 ranks + 2 markers.
  REQUIRE(events.size() == 8);

  int n_markers = 0;
  double expected_t = 0.0;
  for (const auto& e : events) {
    CHECK(e.step == 3);
    if (e.collective) {
      CHECK(e.t_start == expected_t);
      CHECK(e.t_end == e.t_start + 1.0);
      if (e.rank == 1) {
        expected_t += 1.0;
      }
    } else {
      ++n_markers;
      CHECK(e.op == "between");
      CHECK(e.t_start == 1.0);  // after the first collective completed
      CHECK(e.t_end == e.t_start);
    }
  }
  CHECK(n_markers == 2);

  CHECK(events[0].op == "all_reduce");
  CHECK(events[0].payload_len == 3);
  CHECK(events[0].layer == 7);
  const auto& last = events[events.size() - 1];
  CHECK(last.op == "barrier");
  CHECK(last.payload_len == 0);
}

TEST_CASE("mode_from_env parses the mode variable") {
  const char* saved = std::getenv("SHARDTRAIN_MODE");
  const std::string saved_copy = saved != nullptr ? saved : "";

  unsetenv("SHARDTRAIN_MODE");
  CHECK(fabric::mode_from_env() == Mode::sim);
  setenv("SHARDTRAIN_MODE", "", 1);
  CHECK(fabric::mode_from_env() == Mode::sim);
  setenv("SHARDTRAIN_MODE", "sim", 1);
  CHECK(fabric::mode_from_env() == Mode::sim);
  setenv("SHARDTRAIN_MODE", "parallel", 1);
  CHECK(fabric::mode_from_env() == Mode::parallel);
  setenv("SHARDTRAIN_MODE", "bogus", 1);
  CHECK_THROWS_AS(fabric::mode_from_env(), ConfigError);

  if (saved != nullptr) {
    setenv("SHARDTRAIN_MODE", saved_copy.c_str(), 1);
  } else {
    unsetenv("SHARDTRAIN_MODE");
  }
}

TEST_CASE("world size must be positive") {
  CHECK_THROWS_AS(World(0, Mode::sim), ConfigError);
  CHECK_THROWS_AS(World(-3, Mode::parallel), ConfigError);
}

TEST_CASE("single-rank worlds run collectives trivially") {
  World world(1, Mode::sim);
  std::vector<double> got;
  world.run([&](WorldHandle& h) {
    std::vector<double> v{4.0, 5.0};
    got = h.all_reduce(v);
    CHECK(h.all_gather(v) == v);
    CHECK(h.broadcast(v, 0) == v);
    CHECK(h.reduce_scatter(v) == v);
    h.barrier();
  });
  CHECK(got == std::vector<double>{4.0, 5.0});
}
