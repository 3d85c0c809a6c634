// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "shardtrain/linalg.hpp"
#include "shardtrain/rng.hpp"

namespace shardtrain::swav {

struct SwavConfig {
  double tau = 0.1;              // softmax temperature
  double epsilon = 0.05;         // sinkhorn entropy regularizer
  int n_sinkhorn_iters = 10;
  int n_prototypes = 16;
  int n_global_views = 2;
  int n_local_views = 4;
  double noise_scale = 0.05;     // global-view perturbation std
  double local_noise_scale = 2.0;  // extra factor for local views
  double mask_keep_ratio = 0.6;  // fraction of dims a local view keeps
};

void validate(const SwavConfig& cfg);

// Balanced code assignment by Sinkhorn-Knopp. scores is prototypes x batch;
// the result Q has the same shape, nonnegative entries, row sums that
// approach 1/K and column sums equal to 1/B. Each round rescales rows then
// columns, so iteration always ends on a column pass; the final column pass
// pins every column's left-to-right sum to exactly 1.0/B by construction.
Matrix sinkhorn(const Matrix& scores, const SwavConfig& cfg);

// Column softmax at temperature tau with per-column max subtraction.
Matrix softmax_columns(const Matrix& scores, double tau);

struct LossResult {
  double loss = 0.0;
  // d loss / d scores, one prototypes x batch matrix per view.
  std::vector<Matrix> score_grads;
};

// Swapped prediction: every view predicts the codes of every other global
// view. Pair order is fixed (code view ascending, predictor ascending), and
// codes are constants: no gradient flows through them.
LossResult swav_loss_with_codes(const std::vector<Matrix>& scores_per_view,
                                const std::vector<Matrix>& codes_per_global,
                                const SwavConfig& cfg);

// Convenience wrapper: scores each view's embeddings (rows, unit norm)
// against prototype rows, runs sinkhorn on the global views, then evaluates
// the swapped-prediction loss.
LossResult swav_loss(const std::vector<Matrix>& embeddings_per_view,
                     const Matrix& prototypes, const SwavConfig& cfg);

// Multi-crop views of one sample: n_global_views full-dimension noisy
// copies, then n_local_views masked copies that keep a random subset of
// round(mask_keep_ratio * dim) coordinates (zeroes elsewhere) under stronger
// noise. Draw order is fixed, so a view set is a pure function of the rng
// key.
std::vector<std::vector<double>> make_views(std::span<const double> sample,
                                            const SwavConfig& cfg, Rng& rng);

struct SynthDataset {
  Matrix samples;           // n_samples x dim
  std::vector<int> labels;  // cluster ids, used only by the probe
  Matrix means;
  int n_clusters = 0;
};

// Gaussian blobs around unit-norm cluster centers, label i % n_clusters.
SynthDataset synth_dataset(int n_clusters, int dim, int n_samples,
                           double spread, std::uint64_t seed);

}  // namespace shardtrain::swav
