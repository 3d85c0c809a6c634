// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#include "shardtrain/probe.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "shardtrain/errors.hpp"
#include "shardtrain/optim.hpp"
#include "shardtrain/rng.hpp"

namespace shardtrain::probe {

void ProbeConfig::validate() const {
  if (epochs < 1) {
    throw ConfigError("probe: epochs must be at least 1");
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw ConfigError("probe: lr must be positive and finite");
  }
  if (weight_decay < 0.0 || !std::isfinite(weight_decay)) {
    throw ConfigError("probe: weight_decay must be nonnegative");
  }
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("probe: momentum must lie in [0, 1)");
  }
  for (int m : step_milestones) {
    if (m < 0) {
      throw ConfigError("probe: milestones must be nonnegative epochs");
    }
  }
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw ConfigError("probe: gamma must be positive");
  }
  if (batch_size < 1) {
    throw ConfigError("probe: batch_size must be at least 1");
  }
  if (!(holdout_fraction > 0.0) || !(holdout_fraction < 1.0)) {
    throw ConfigError("probe: holdout_fraction must lie in (0, 1)");
  }
}

Matrix extract_features(const engine::LayeredNet& net,
                        const Matrix& samples) {
  return engine::embed(net, samples);
}

namespace {

// Logits for one sample; w is row-major (n_classes x dim), b follows.
void sample_logits(std::span<const double> params, std::size_t dim,
                   int n_classes, std::span<const double> x,
                   std::span<double> out) {
  for (int c = 0; c < n_classes; ++c) {
    double acc = 0.0;
    const double* row = params.data() + static_cast<std::size_t>(c) * dim;
    for (std::size_t k = 0; k < dim; ++k) {
      acc += row[k] * x[k];
    }
    acc += params[static_cast<std::size_t>(n_classes) * dim +
                  static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(c)] = acc;
  }
}

// In place: logits -> probabilities, with max subtraction for stability.
void softmax_inplace(std::span<double> v) {
  double mx = v[0];
  for (double x : v) {
    mx = std::max(mx, x);
  }
  double total = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    total += x;
  }
  for (double& x : v) {
    x /= total;
  }
}

void fisher_yates(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::uint64_t j = rng.below(i);
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(j)]);
  }
}

}  // namespace

ProbeResult train_probe(const Matrix& features,
                        std::span<const int> labels, int n_classes,
                        const ProbeConfig& cfg) {
  cfg.validate();
  if (features.rows == 0 || features.cols == 0) {
    throw ConfigError("probe: empty feature matrix");
  }
  if (labels.size() != features.rows) {
    throw ShapeError("probe: one label per feature row is required");
  }
  if (n_classes < 2) {
    throw ConfigError("probe: at least two classes are required");
  }
  std::set<int> distinct;
  for (int y : labels) {
    if (y < 0 || y >= n_classes) {
      throw ConfigError("probe: label outside [0, n_classes)");
    }
    distinct.insert(y);
  }
  if (distinct.size() < 2) {
    throw ConfigError("probe: labels cover a single class");
  }
  if (!all_finite(features)) {
    throw NumericError("probe: non-finite feature");
  }

  const std::size_t n = features.rows;
  const std::size_t dim = features.cols;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    order[i] = i;
  }
  Rng split_rng(mix_key({cfg.seed, streams::kProbeSplit}));
  fisher_yates(order, split_rng);

  std::size_t n_test = static_cast<std::size_t>(
      std::llround(cfg.holdout_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  const std::size_t n_train = n - n_test;
  std::vector<std::size_t> train_idx(order.begin(),
                                     order.begin() +
                                         static_cast<std::ptrdiff_t>(n_train));
  const std::vector<std::size_t> test_idx(
      order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

  const std::size_t n_params =
      static_cast<std::size_t>(n_classes) * dim +
      static_cast<std::size_t>(n_classes);
  std::vector<double> params(n_params, 0.0);
  std::vector<double> velocity(n_params, 0.0);
  Rng init_rng(mix_key({cfg.seed, streams::kProbeInit}));
  const double init_scale = 0.01;
  for (std::size_t i = 0; i < static_cast<std::size_t>(n_classes) * dim;
       ++i) {
    params[i] = init_scale * init_rng.gaussian();
  }

  ProbeResult res;
  res.n_train = n_train;
  res.n_test = n_test;
  res.epoch_losses.reserve(static_cast<std::size_t>(cfg.epochs));

  std::vector<double> grad(n_params, 0.0);
  std::vector<double> logits(static_cast<std::size_t>(n_classes), 0.0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    int decays = 0;
    for (int m : cfg.step_milestones) {
      if (epoch >= m) {
        ++decays;
      }
    }
    const double lr_e = cfg.lr * std::pow(cfg.gamma, decays);

    Rng shuffle_rng(mix_key({cfg.seed, streams::kProbeShuffle,
                             static_cast<std::uint64_t>(epoch)}));
    fisher_yates(train_idx, shuffle_rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n_train;
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(n_train, start + static_cast<std::size_t>(cfg.batch_size));
      const double inv_b = 1.0 / static_cast<double>(stop - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t pos = start; pos < stop; ++pos) {
        const std::size_t i = train_idx[pos];
        const std::span<const double> x(features.row(i), dim);
        sample_logits(params, dim, n_classes, x, logits);
        softmax_inplace(logits);
        const std::size_t y = static_cast<std::size_t>(labels[i]);
        const double p = logits[y];
        if (!(p > 0.0)) {
          throw NumericError("probe: softmax underflow on the true class");
        }
        epoch_loss += -std::log(p);
        for (int c = 0; c < n_classes; ++c) {
          const double d =
              (logits[static_cast<std::size_t>(c)] -
               (static_cast<std::size_t>(c) == y ? 1.0 : 0.0)) *
              inv_b;
          double* grow = grad.data() + static_cast<std::size_t>(c) * dim;
          for (std::size_t k = 0; k < dim; ++k) {
            grow[k] += d * x[k];
          }
          grad[static_cast<std::size_t>(n_classes) * dim +
               static_cast<std::size_t>(c)] += d;
        }
      }
      optim::sgd_step(params, grad, velocity, lr_e, cfg.weight_decay,
                      cfg.momentum);
    }
    res.epoch_losses.push_back(epoch_loss / static_cast<double>(n_train));
  }

  std::size_t hits = 0;
  for (std::size_t i : test_idx) {
    sample_logits(params, dim, n_classes,
                  std::span<const double>(features.row(i), dim), logits);
    std::size_t best = 0;
    for (std::size_t c = 1; c < static_cast<std::size_t>(n_classes); ++c) {
      if (logits[c] > logits[best]) {
        best = c;
      }
    }
    if (best == static_cast<std::size_t>(labels[i])) {
      ++hits;
    }
  }
  res.top1 = static_cast<double>(hits) / static_cast<double>(n_test);
  return res;
}

}  // namespace shardtrain::probe
