// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

namespace shardtrain::netspec {

// Width-family parameters. A linear ramp u_j = w0 + wa*j over block index j
// is quantized to a short list of stage widths; total_depth is the number of
// blocks, group_width the channel-group divisor every width must respect.
struct RegnetConfig {
  double w0 = 0.0;
  double wa = 0.0;
  double wm = 0.0;
  int total_depth = 0;
  int group_width = 1;
};

// One entry per stage. widths.size() == depths.size(), depths sum to
// total_depth, widths strictly increase when wa > 0.
struct StageTable {
  std::vector<int> widths;
  std::vector<int> depths;
};

// Stage table quantization:
//   u_j = w0 + wa * j                       continuous ramp, j in [0, depth)
//   s_j = round(log(u_j / w0) / log(wm))    0 when wa == 0
//   q_j = w0 * wm^s_j, rounded to the nearest multiple of 8, ties half-up
//   g_j = min(group_width, q_j)
//   w_j = round(q_j / g_j) * g_j            ties half-up
// Stages are maximal runs of equal w_j.
StageTable generate_widths(const RegnetConfig& cfg);

// Desk-scale network description: per-stage block widths, a projection head,
// and a prototype bank.
struct ModelSpec {
  std::vector<int> stage_widths;
  std::vector<int> stage_depths;
  std::vector<int> head_dims;
  int n_prototypes = 0;

  // Widths of all dense layers in order: one per block, then the head.
  std::vector<int> layer_widths() const;
  // Dimension of the normalized embedding scored against prototypes.
  int embed_dim() const;
};

// Scales a full-size stage table down by an integer divisor (each width
// becomes max(1, round(w / divisor))) and attaches head and prototypes.
ModelSpec toy_spec(const RegnetConfig& cfg, int scale_divisor,
                   std::vector<int> head_dims, int n_prototypes);

// Per-layer activation sizes in bytes for one microbatch.
struct ActivationProfile {
  std::vector<std::uint64_t> m;
  int batch = 0;
  int bytes_per_elem = 0;
};

ActivationProfile activation_profile(const ModelSpec& spec, int batch,
                                     int bytes_per_elem);

}  // namespace shardtrain::netspec
