// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#include "shardtrain/swav.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "shardtrain/errors.hpp"

namespace shardtrain::swav {

void validate(const SwavConfig& cfg) {
  if (!(cfg.tau > 0.0)) {
    throw ConfigError("swav: tau must be positive");
  }
  if (!(cfg.epsilon > 0.0)) {
    throw ConfigError("swav: epsilon must be positive");
  }
  if (cfg.n_sinkhorn_iters < 1) {
    throw ConfigError("swav: n_sinkhorn_iters must be at least 1");
  }
  if (cfg.n_prototypes < 2) {
    throw ConfigError("swav: n_prototypes must be at least 2");
  }
  if (cfg.n_global_views < 1) {
    throw ConfigError("swav: n_global_views must be at least 1");
  }
  if (cfg.n_local_views < 0) {
    throw ConfigError("swav: n_local_views must be nonnegative");
  }
  if (cfg.n_global_views + cfg.n_local_views < 2) {
    throw ConfigError("swav: need at least two views in total");
  }
  if (!(cfg.mask_keep_ratio > 0.0) || cfg.mask_keep_ratio > 1.0) {
    throw ConfigError("swav: mask_keep_ratio must be in (0, 1]");
  }
  if (cfg.noise_scale < 0.0 || cfg.local_noise_scale < 0.0) {
    throw ConfigError("swav: noise scales must be nonnegative");
  }
}

namespace {

// Rescales one column to mass `target`, then pins its left-to-right sum to
// exactly `target` by setting the final entry of the summation chain. With
// prefix the rounded chain sum of the first K-1 entries, three regimes:
//
//   prefix in [target/2, target]: target - prefix is exact (Sterbenz), so
//     writing it into the last entry closes the sum in one shot.
//   prefix < target/2: the last entry lands in the target's binade, where
//     ulp steps move the rounded sum one ulp at a time. A short walk finds
//     the target unless the exact sums sit precisely on round-half-to-even
//     ties; then a one-ulp nudge of the largest earlier entry shifts the
//     lattice off the tie (its ulp is strictly finer) and the walk is
//     retried.
//   prefix > target: pure rounding overshoot with a near-zero tail; the
//     excess is pulled out of the largest earlier entry.
void normalize_column_exact(Matrix& q, std::size_t b, double target) {
  const std::size_t K = q.rows;
  double colsum = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    colsum += q.at(k, b);
  }
  if (!(colsum > 0.0) || !std::isfinite(colsum)) {
    throw NumericError("sinkhorn: degenerate column mass");
  }
  const double scale = target / colsum;
  for (std::size_t k = 0; k < K; ++k) {
    q.at(k, b) *= scale;
  }
  if (K == 1) {
    q.at(0, b) = target;
    return;
  }
  for (int outer = 0; outer < 256; ++outer) {
    double prefix = 0.0;
    for (std::size_t k = 0; k + 1 < K; ++k) {
      prefix += q.at(k, b);
    }
    const double want = target - prefix;
    if (want >= 0.0) {
      double x = want;
      for (int step = 0; step < 128; ++step) {
        if (prefix + x == target) {
          q.at(K - 1, b) = x;
          return;
        }
        const double next =
            prefix + x < target
                ? std::nextafter(x, std::numeric_limits<double>::infinity())
                : std::nextafter(x, 0.0);
        if (next < 0.0 || next == x) {
          break;
        }
        x = next;
      }
    }
    // Tie resonance or overshoot: move the largest pre-tail entry by one of
    // its own ulps (downward mass stays nonnegative), or absorb the whole
    // overshoot when the tail alone cannot go low enough.
    std::size_t k_big = 0;
    for (std::size_t k = 1; k + 1 < K; ++k) {
      if (q.at(k, b) > q.at(k_big, b)) {
        k_big = k;
      }
    }
    if (want < 0.0) {
      q.at(k_big, b) = std::max(0.0, q.at(k_big, b) + want);
      q.at(K - 1, b) = 0.0;
    } else {
      q.at(k_big, b) = std::nextafter(q.at(k_big, b), 0.0);
    }
  }
  throw NumericError("sinkhorn: column normalization failed to converge");
}

}  // namespace

Matrix sinkhorn(const Matrix& scores, const SwavConfig& cfg) {
  if (scores.rows < 1 || scores.cols < 1) {
    throw ShapeError("sinkhorn: empty score matrix");
  }
  if (!(cfg.epsilon > 0.0)) {
    throw ConfigError("sinkhorn: epsilon must be positive");
  }
  if (cfg.n_sinkhorn_iters < 1) {
    throw ConfigError("sinkhorn: need at least one iteration");
  }
  if (!all_finite(scores)) {
    throw NumericError("sinkhorn: scores contain non-finite values");
  }

  const std::size_t K = scores.rows;
  const std::size_t B = scores.cols;
  const double row_target = 1.0 / static_cast<double>(K);
  const double col_target = 1.0 / static_cast<double>(B);

  // Shifting by the global max before exponentiation changes nothing after
  // normalization but keeps exp in range.
  double smax = scores.data[0];
  for (double v : scores.data) {
    smax = std::max(smax, v);
  }
  Matrix q(K, B);
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t b = 0; b < B; ++b) {
      double e = std::exp((scores.at(k, b) - smax) / cfg.epsilon);
      q.at(k, b) = e;
      total += e;
    }
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw NumericError("sinkhorn: degenerate total mass");
  }
  for (double& v : q.data) {
    v /= total;
  }

  for (int it = 0; it < cfg.n_sinkhorn_iters; ++it) {
    for (std::size_t k = 0; k < K; ++k) {
      double rowsum = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        rowsum += q.at(k, b);
      }
      if (!(rowsum > 0.0) || !std::isfinite(rowsum)) {
        throw NumericError("sinkhorn: degenerate row mass");
      }
      const double scale = row_target / rowsum;
      for (std::size_t b = 0; b < B; ++b) {
        q.at(k, b) *= scale;
      }
    }
    for (std::size_t b = 0; b < B; ++b) {
      normalize_column_exact(q, b, col_target);
    }
  }
  return q;
}

Matrix softmax_columns(const Matrix& scores, double tau) {
  if (!(tau > 0.0)) {
    throw ConfigError("softmax: tau must be positive");
  }
  const std::size_t K = scores.rows;
  const std::size_t B = scores.cols;
  Matrix p(K, B);
  for (std::size_t b = 0; b < B; ++b) {
    double m = scores.at(0, b);
    for (std::size_t k = 1; k < K; ++k) {
      m = std::max(m, scores.at(k, b));
    }
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      double e = std::exp((scores.at(k, b) - m) / tau);
      p.at(k, b) = e;
      denom += e;
    }
    for (std::size_t k = 0; k < K; ++k) {
      p.at(k, b) /= denom;
    }
  }
  return p;
}

LossResult swav_loss_with_codes(const std::vector<Matrix>& scores_per_view,
                                const std::vector<Matrix>& codes_per_global,
                                const SwavConfig& cfg) {
  const std::size_t n_views = scores_per_view.size();
  const std::size_t n_global = codes_per_global.size();
  if (n_views < 2) {
    throw ConfigError("swav_loss: need at least two views");
  }
  if (n_global < 1 || n_global > n_views) {
    throw ConfigError("swav_loss: global view count out of range");
  }
  const std::size_t K = scores_per_view[0].rows;
  const std::size_t B = scores_per_view[0].cols;
  for (const Matrix& s : scores_per_view) {
    if (s.rows != K || s.cols != B) {
      throw ShapeError("swav_loss: score shapes differ across views");
    }
    if (!all_finite(s)) {
      throw NumericError("swav_loss: scores contain non-finite values");
    }
  }
  for (const Matrix& c : codes_per_global) {
    if (c.rows != K || c.cols != B) {
      throw ShapeError("swav_loss: code shapes differ from scores");
    }
  }

  std::vector<Matrix> probs;
  probs.reserve(n_views);
  for (const Matrix& s : scores_per_view) {
    probs.push_back(softmax_columns(s, cfg.tau));
  }

  LossResult out;
  out.score_grads.assign(n_views, Matrix(K, B));
  const double n_pairs =
      static_cast<double>(n_global) * static_cast<double>(n_views - 1);

  double loss_acc = 0.0;
  for (std::size_t i = 0; i < n_global; ++i) {
    const Matrix& codes = codes_per_global[i];
    for (std::size_t v = 0; v < n_views; ++v) {
      if (v == i) {
        continue;
      }
      const Matrix& p = probs[v];
      Matrix& g = out.score_grads[v];
      double pair_acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t b = 0; b < B; ++b) {
          pair_acc += codes.at(k, b) * std::log(p.at(k, b));
        }
      }
      loss_acc += -pair_acc;
      const double inv_b = 1.0 / static_cast<double>(B);
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t b = 0; b < B; ++b) {
          g.at(k, b) += p.at(k, b) * inv_b - codes.at(k, b);
        }
      }
    }
  }

  out.loss = loss_acc / n_pairs;
  const double gscale = 1.0 / (cfg.tau * n_pairs);
  for (Matrix& g : out.score_grads) {
    for (double& x : g.data) {
      x *= gscale;
    }
  }
  if (!std::isfinite(out.loss)) {
    throw NumericError("swav_loss: loss is not finite");
  }
  return out;
}

LossResult swav_loss(const std::vector<Matrix>& embeddings_per_view,
                     const Matrix& prototypes, const SwavConfig& cfg) {
  if (embeddings_per_view.empty()) {
    throw ConfigError("swav_loss: no views");
  }
  const std::size_t n_global =
      static_cast<std::size_t>(cfg.n_global_views);
  if (embeddings_per_view.size() < n_global) {
    throw ConfigError("swav_loss: fewer views than n_global_views");
  }
  std::vector<Matrix> scores;
  scores.reserve(embeddings_per_view.size());
  for (const Matrix& z : embeddings_per_view) {
    if (z.cols != prototypes.cols) {
      throw ShapeError("swav_loss: embedding and prototype dims differ");
    }
    scores.push_back(matmul_bt(prototypes, z));
  }
  std::vector<Matrix> codes;
  codes.reserve(n_global);
  for (std::size_t i = 0; i < n_global; ++i) {
    codes.push_back(sinkhorn(scores[i], cfg));
  }
  return swav_loss_with_codes(scores, codes, cfg);
}

std::vector<std::vector<double>> make_views(std::span<const double> sample,
                                            const SwavConfig& cfg, Rng& rng) {
  validate(cfg);
  const std::size_t dim = sample.size();
  if (dim == 0) {
    throw ShapeError("make_views: empty sample");
  }
  std::vector<std::vector<double>> views;
  views.reserve(static_cast<std::size_t>(cfg.n_global_views) +
                static_cast<std::size_t>(cfg.n_local_views));

  for (int v = 0; v < cfg.n_global_views; ++v) {
    std::vector<double> view(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      view[d] = sample[d] + cfg.noise_scale * rng.gaussian();
    }
    views.push_back(std::move(view));
  }

  const auto keep_target = static_cast<std::size_t>(std::llround(
      cfg.mask_keep_ratio * static_cast<double>(dim)));
  const std::size_t keep = std::clamp<std::size_t>(keep_target, 1, dim);
  const double local_scale = cfg.noise_scale * cfg.local_noise_scale;

  for (int v = 0; v < cfg.n_local_views; ++v) {
    // Partial Fisher-Yates: the first `keep` slots become the kept subset.
    std::vector<std::size_t> idx(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      idx[d] = d;
    }
    std::vector<char> kept(dim, 0);
    for (std::size_t i = 0; i < keep; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.below(dim - i));
      std::swap(idx[i], idx[j]);
      kept[idx[i]] = 1;
    }
    std::vector<double> view(dim, 0.0);
    for (std::size_t d = 0; d < dim; ++d) {
      if (kept[d]) {
        view[d] = sample[d] + local_scale * rng.gaussian();
      }
    }
    views.push_back(std::move(view));
  }
  return views;
}

SynthDataset synth_dataset(int n_clusters, int dim, int n_samples,
                           double spread, std::uint64_t seed) {
  if (n_clusters < 1) {
    throw ConfigError("synth_dataset: n_clusters must be at least 1");
  }
  if (dim < 1) {
    throw ConfigError("synth_dataset: dim must be at least 1");
  }
  if (n_samples < 1) {
    throw ConfigError("synth_dataset: n_samples must be at least 1");
  }
  if (spread < 0.0) {
    throw ConfigError("synth_dataset: spread must be nonnegative");
  }

  SynthDataset ds;
  ds.n_clusters = n_clusters;
  ds.means = Matrix(static_cast<std::size_t>(n_clusters),
                    static_cast<std::size_t>(dim));
  Rng mean_rng(mix_key({seed, streams::kDatasetMeans}));
  for (std::size_t c = 0; c < ds.means.rows; ++c) {
    for (std::size_t d = 0; d < ds.means.cols; ++d) {
      ds.means.at(c, d) = mean_rng.gaussian();
    }
    double norm = std::sqrt(
        sum_of_squares(std::span<const double>(ds.means.row(c), ds.means.cols)));
    if (!(norm > 0.0)) {
      throw NumericError("synth_dataset: degenerate cluster mean");
    }
    for (std::size_t d = 0; d < ds.means.cols; ++d) {
      ds.means.at(c, d) /= norm;
    }
  }

  ds.samples = Matrix(static_cast<std::size_t>(n_samples),
                      static_cast<std::size_t>(dim));
  ds.labels.resize(static_cast<std::size_t>(n_samples));
  Rng sample_rng(mix_key({seed, streams::kDatasetSamples}));
  for (std::size_t i = 0; i < ds.samples.rows; ++i) {
    const auto c = static_cast<std::size_t>(i % static_cast<std::size_t>(n_clusters));
    ds.labels[i] = static_cast<int>(c);
    for (std::size_t d = 0; d < ds.samples.cols; ++d) {
      ds.samples.at(i, d) = ds.means.at(c, d) + spread * sample_rng.gaussian();
    }
  }
  return ds;
}

}  // namespace shardtrain::swav
