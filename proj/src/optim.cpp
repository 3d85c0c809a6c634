// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#include "shardtrain/optim.hpp"

#include <cmath>
#include <string>

#include "shardtrain/errors.hpp"
#include "shardtrain/fabric.hpp"
#include "shardtrain/linalg.hpp"

namespace shardtrain::optim {

double larc_coeff(double w_norm, double g_norm, const LarcConfig& cfg) {
  if (!(cfg.eta > 0.0)) {
    throw ConfigError("larc: eta must be positive");
  }
  if (cfg.beta < 0.0) {
    throw ConfigError("larc: beta must be nonnegative");
  }
  if (!std::isfinite(w_norm) || !std::isfinite(g_norm) || w_norm < 0.0 ||
      g_norm < 0.0) {
    throw NumericError("larc: norms must be finite and nonnegative");
  }
  if (w_norm == 0.0 || g_norm == 0.0) {
    return cfg.fallback;
  }
  return cfg.eta * w_norm / (g_norm + cfg.beta * w_norm);
}

double schedule_lr(long iter, const LrSchedule& sched) {
  if (sched.total_iters < 1) {
    throw ConfigError("schedule: total_iters must be at least 1");
  }
  if (sched.warmup_iters < 0 || sched.warmup_iters >= sched.total_iters) {
    throw ConfigError("schedule: warmup_iters must lie in [0, total_iters)");
  }
  if (iter < 0 || iter > sched.total_iters) {
    throw ConfigError("schedule: iter " + std::to_string(iter) +
                      " outside [0, " + std::to_string(sched.total_iters) +
                      "]");
  }
  if (iter < sched.warmup_iters) {
    double u = static_cast<double>(iter) /
               static_cast<double>(sched.warmup_iters);
    return sched.base_lr * (1.0 - u) + sched.peak_lr * u;
  }
  double t = static_cast<double>(iter - sched.warmup_iters) /
             static_cast<double>(sched.total_iters - sched.warmup_iters);
  double f = 0.5 * (1.0 + std::cos(3.141592653589793238462643383279502884 * t));
  return sched.peak_lr * f + sched.final_lr * (1.0 - f);
}

void sgd_step(std::span<double> w, std::span<const double> g,
              std::span<double> v, double lr_eff, double weight_decay,
              double momentum) {
  if (w.size() != g.size() || w.size() != v.size()) {
    throw ShapeError("sgd_step: parameter, gradient and momentum lengths "
                     "differ");
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    double grad = g[i] + weight_decay * w[i];
    v[i] = momentum * v[i] + grad;
    w[i] = w[i] - lr_eff * v[i];
  }
}

std::vector<LayerNorms> distributed_norms(
    const std::vector<std::span<const double>>& w_shards,
    const std::vector<std::span<const double>>& g_shards,
    fabric::WorldHandle& world) {
  if (w_shards.size() != g_shards.size()) {
    throw ShapeError("distributed_norms: weight and gradient layer counts "
                     "differ");
  }
  const std::size_t n_layers = w_shards.size();
  std::vector<double> payload(2 * n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    if (w_shards[l].size() != g_shards[l].size()) {
      throw ShapeError("distributed_norms: shard lengths differ at layer " +
                       std::to_string(l));
    }
    payload[2 * l] = sum_of_squares(w_shards[l]);
    payload[2 * l + 1] = sum_of_squares(g_shards[l]);
  }

  std::vector<double> reduced = world.all_reduce(payload, /*layer=*/-1);

  std::vector<LayerNorms> out(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    out[l].w_norm = std::sqrt(reduced[2 * l]);
    out[l].g_norm = std::sqrt(reduced[2 * l + 1]);
  }
  return out;
}

std::vector<LayerNorms> chunked_norms(
    const std::vector<std::span<const double>>& w_full,
    const std::vector<std::span<const double>>& g_full, int world_size) {
  if (w_full.size() != g_full.size()) {
    throw ShapeError("chunked_norms: weight and gradient layer counts differ");
  }
  if (world_size < 1) {
    throw ConfigError("chunked_norms: world_size must be at least 1");
  }
  const std::size_t n_layers = w_full.size();
  const auto world = static_cast<std::size_t>(world_size);

  // Reproduces the sharded reduction exactly: per-rank partial sums over the
  // rank's contiguous chunk, folded in ascending rank order. Shard padding
  // is all zeros and adds +0.0 terms, which leave each partial unchanged, so
  // chunks of the unpadded vector give the same bits.
  auto chunked_sq = [&](std::span<const double> v) {
    const std::size_t len = v.size();
    const std::size_t shard_len = (len + world - 1) / world;
    double acc = 0.0;
    for (std::size_t r = 0; r < world; ++r) {
      std::size_t lo = std::min(r * shard_len, len);
      std::size_t hi = std::min(lo + shard_len, len);
      double partial = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        partial += v[i] * v[i];
      }
      acc += partial;
    }
    return acc;
  };

  std::vector<LayerNorms> out(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    if (w_full[l].size() != g_full[l].size()) {
      throw ShapeError("chunked_norms: vector lengths differ at layer " +
                       std::to_string(l));
    }
    out[l].w_norm = std::sqrt(chunked_sq(w_full[l]));
    out[l].g_norm = std::sqrt(chunked_sq(g_full[l]));
  }
  return out;
}

}  // namespace shardtrain::optim
