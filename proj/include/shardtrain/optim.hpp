// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

namespace shardtrain::fabric {
class WorldHandle;
}

namespace shardtrain::optim {

// Layerwise adaptive rate clipping. The trust coefficient for a layer is
//   lambda = eta * |w| / (|g| + beta * |w|)
// and falls back to `fallback` when either norm is zero.
struct LarcConfig {
  double eta = 0.001;
  double beta = 0.0;
  double fallback = 1.0;
};

double larc_coeff(double w_norm, double g_norm, const LarcConfig& cfg);

// Linear warmup from base_lr to peak_lr over warmup_iters, then half-cosine
// decay to final_lr at total_iters. Both pieces are evaluated as convex
// blends so the endpoints are exact.
struct LrSchedule {
  double base_lr = 0.0;
  double peak_lr = 0.0;
  double final_lr = 0.0;
  long warmup_iters = 0;
  long total_iters = 0;
};

double schedule_lr(long iter, const LrSchedule& sched);

// SGD with momentum and coupled weight decay, elementwise:
//   g <- g + wd * w;  v <- mu * v + g;  w <- w - lr_eff * v
// Biases and prototype rows flow through the same update; nothing is
// excluded from decay.
void sgd_step(std::span<double> w, std::span<const double> g,
              std::span<double> v, double lr_eff, double weight_decay,
              double momentum);

// Per-layer (weight, gradient) L2 norms.
struct LayerNorms {
  double w_norm = 0.0;
  double g_norm = 0.0;
};

// Norms over sharded layers: each rank reduces its shard to two partial sums
// of squares per layer, all partials cross the fabric in one all_reduce of
// exactly 2 * n_layers doubles, and the square roots are taken after the
// reduction.
std::vector<LayerNorms> distributed_norms(
    const std::vector<std::span<const double>>& w_shards,
    const std::vector<std::span<const double>>& g_shards,
    fabric::WorldHandle& world);

// Serial twin of distributed_norms: the same chunking, the same partial-sum
// and fold orders, no fabric. Given the full per-layer vectors it produces
// bit-identical norms to the sharded path at the same world size.
std::vector<LayerNorms> chunked_norms(
    const std::vector<std::span<const double>>& w_full,
    const std::vector<std::span<const double>>& g_full, int world_size);

}  // namespace shardtrain::optim
