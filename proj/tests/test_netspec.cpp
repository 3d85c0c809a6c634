// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "shardtrain/errors.hpp"
#include "shardtrain/netspec.hpp"

using namespace shardtrain;
using netspec::RegnetConfig;
using netspec::StageTable;

namespace {

RegnetConfig make(double w0, double wa, double wm, int depth, int group) {
  RegnetConfig c;
  c.w0 = w0;
  c.wa = wa;
  c.wm = wm;
  c.total_depth = depth;
  c.group_width = group;
  return c;
}

}  // namespace

TEST_CASE("flagship family quantizes to the published stage table") {
  const StageTable t = netspec::generate_widths(make(456, 160.83, 2.52, 27, 264));
  CHECK(t.widths == std::vector<int>{528, 1056, 2904, 7392});
  CHECK(t.depths == std::vector<int>{2, 7, 17, 1});
}

TEST_CASE("mid-size family quantizes to the published stage table") {
  const StageTable t = netspec::generate_widths(make(192, 76.82, 2.19, 27, 56));
  CHECK(t.widths == std::vector<int>{168, 448, 896, 2016});
  CHECK(t.depths == std::vector<int>{2, 4, 10, 11});
}

TEST_CASE("largest family quantizes to the published stage table") {
  const StageTable t =
      netspec::generate_widths(make(1744, 620.83, 2.52, 27, 1010));
  CHECK(t.widths == std::vector<int>{2020, 4040, 11110, 28280});
  CHECK(t.depths == std::vector<int>{2, 7, 17, 1});
}

TEST_CASE("zero slope collapses to one flat stage") {
  const StageTable t = netspec::generate_widths(make(64, 0.0, 1.0, 4, 32));
  CHECK(t.widths == std::vector<int>{64});
  CHECK(t.depths == std::vector<int>{4});
}

TEST_CASE("depths sum to total depth and widths respect the group") {
  const StageTable t = netspec::generate_widths(make(456, 160.83, 2.52, 27, 264));
  int total = 0;
  for (int d : t.depths) total += d;
  CHECK(total == 27);
  for (int w : t.widths) {
    const int g = std::min(264, w);
    CHECK(w % g == 0);
  }
}

TEST_CASE("invalid family parameters are rejected") {
  CHECK_THROWS_AS(netspec::generate_widths(make(0, 10, 2, 4, 8)), ConfigError);
  CHECK_THROWS_AS(netspec::generate_widths(make(64, -1, 2, 4, 8)),
                  ConfigError);
  CHECK_THROWS_AS(netspec::generate_widths(make(64, 10, 1.0, 4, 8)),
                  ConfigError);
  CHECK_THROWS_AS(netspec::generate_widths(make(64, 10, 2, 0, 8)),
                  ConfigError);
  CHECK_THROWS_AS(netspec::generate_widths(make(64, 10, 2, 4, 0)),
                  ConfigError);
  // Quantizing below the minimum block width is an error, not a clamp.
  CHECK_THROWS_AS(netspec::generate_widths(make(2, 0.0, 1.0, 2, 1)),
                  ConfigError);
}

TEST_CASE("toy spec scales the flagship stages by an integer divisor") {
  const auto spec = netspec::toy_spec(make(456, 160.83, 2.52, 27, 264), 264,
                                      {32, 16}, 12);
  CHECK(spec.stage_widths == std::vector<int>{2, 4, 11, 28});
  CHECK(spec.stage_depths == std::vector<int>{2, 7, 17, 1});
  CHECK(spec.head_dims == std::vector<int>{32, 16});
  CHECK(spec.n_prototypes == 12);
  CHECK(spec.embed_dim() == 16);
}

TEST_CASE("toy spec scales the mid-size stages by 28") {
  const auto spec =
      netspec::toy_spec(make(192, 76.82, 2.19, 27, 56), 28, {32, 32, 16}, 16);
  CHECK(spec.stage_widths == std::vector<int>{6, 16, 32, 72});
  CHECK(spec.stage_depths == std::vector<int>{2, 4, 10, 11});
}

TEST_CASE("layer widths expand blocks then append the head") {
  netspec::ModelSpec spec;
  spec.stage_widths = {4, 8};
  spec.stage_depths = {2, 1};
  spec.head_dims = {16, 6};
  spec.n_prototypes = 5;
  CHECK(spec.layer_widths() == std::vector<int>{4, 4, 8, 16, 6});
  CHECK(spec.embed_dim() == 6);
}

TEST_CASE("spec without a head embeds at the last stage width") {
  netspec::ModelSpec spec;
  spec.stage_widths = {4, 8};
  spec.stage_depths = {1, 1};
  spec.n_prototypes = 5;
  CHECK(spec.layer_widths() == std::vector<int>{4, 8});
  CHECK(spec.embed_dim() == 8);
}

TEST_CASE("toy spec rejects an oversized divisor") {
  CHECK_THROWS_AS(
      netspec::toy_spec(make(456, 160.83, 2.52, 27, 264), 1000, {16}, 8),
      ConfigError);
  CHECK_THROWS_AS(
      netspec::toy_spec(make(456, 160.83, 2.52, 27, 264), 0, {16}, 8),
      ConfigError);
}

TEST_CASE("activation profile is batch layers widths times element size") {
  netspec::ModelSpec spec;
  spec.stage_widths = {4, 8};
  spec.stage_depths = {2, 1};
  spec.head_dims = {6};
  spec.n_prototypes = 5;
  const auto prof = netspec::activation_profile(spec, 3, 8);
  CHECK(prof.m == std::vector<std::uint64_t>{96, 96, 192, 144});
  CHECK(prof.batch == 3);
  CHECK(prof.bytes_per_elem == 8);
  CHECK_THROWS_AS(netspec::activation_profile(spec, 0, 8), ConfigError);
  CHECK_THROWS_AS(netspec::activation_profile(spec, 3, 2), ConfigError);
}
