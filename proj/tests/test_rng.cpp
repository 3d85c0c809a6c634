// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "shardtrain/rng.hpp"

using namespace shardtrain;

TEST_CASE("mix_key is order sensitive and deterministic") {
  CHECK(mix_key({1, 2, 3}) == mix_key({1, 2, 3}));
  CHECK(mix_key({1, 2, 3}) != mix_key({3, 2, 1}));
  CHECK(mix_key({1, 2}) != mix_key({1, 2, 0}));
  CHECK(mix_key({}) != mix_key({0}));
}

TEST_CASE("streams with different tags never collide on small seeds") {
  std::set<std::uint64_t> keys;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    for (std::uint64_t tag = 1; tag <= 8; ++tag) {
      keys.insert(mix_key({seed, tag}));
    }
  }
  CHECK(keys.size() == 64 * 8);
}

TEST_CASE("generator replays identically from the same key") {
  Rng a(mix_key({42, streams::kInit, 7}));
  Rng b(mix_key({42, streams::kInit, 7}));
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
}

TEST_CASE("uniform stays in [0, 1) and uniform_pos in (0, 1]") {
  Rng r(12345);
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double p = r.uniform_pos();
    CHECK(p > 0.0);
    CHECK(p <= 1.0);
  }
}

TEST_CASE("gaussian moments are sane") {
  Rng r(777);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = r.gaussian();
    CHECK(std::isfinite(g));
    sum += g;
    sq += g * g;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("below is within range and roughly uniform") {
  Rng r(2024);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 100000; ++i) {
    const std::uint64_t v = r.below(10);
    REQUIRE(v < 10);
    ++counts[static_cast<std::size_t>(v)];
  }
  for (int c : counts) {
    CHECK(c > 9000);
    CHECK(c < 11000);
  }
  CHECK(r.below(1) == 0);
}

TEST_CASE("gaussian spare cache keeps the stream aligned") {
  // Drawing 2n gaussians equals drawing them in two batches of n.
  Rng a(99), b(99);
  std::vector<double> one, two;
  for (int i = 0; i < 10; ++i) one.push_back(a.gaussian());
  for (int i = 0; i < 5; ++i) two.push_back(b.gaussian());
  for (int i = 0; i < 5; ++i) two.push_back(b.gaussian());
  CHECK(one == two);
}
