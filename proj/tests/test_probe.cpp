// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "shardtrain/engine.hpp"
#include "shardtrain/errors.hpp"
#include "shardtrain/probe.hpp"
#include "shardtrain/rng.hpp"

using namespace shardtrain;

namespace {

// Well-separated class blobs: class c sits at 4 * e_c in an 8-dim space
// with unit noise, linearly separable with a wide margin.
struct Blobs {
  Matrix features;
  std::vector<int> labels;
};

Blobs make_blobs(int n_classes, int n_samples, double sep, double noise,
                 std::uint64_t seed) {
  Blobs out;
  out.features = Matrix(static_cast<std::size_t>(n_samples), 8);
  out.labels.resize(static_cast<std::size_t>(n_samples));
  Rng rng(mix_key({seed, 1}));
  for (int i = 0; i < n_samples; ++i) {
    const int c = i % n_classes;
    out.labels[static_cast<std::size_t>(i)] = c;
    for (std::size_t d = 0; d < 8; ++d) {
      double v = noise * rng.gaussian();
      if (d == static_cast<std::size_t>(c)) {
        v += sep;
      }
      out.features.at(static_cast<std::size_t>(i), d) = v;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("the probe separates well-separated blobs") {
  const auto blobs = make_blobs(3, 180, 4.0, 0.5, 11);
  probe::ProbeConfig cfg;
  cfg.seed = 5;
  const auto res = probe::train_probe(blobs.features, blobs.labels, 3, cfg);
  CHECK(res.top1 >= 0.95);
  CHECK(res.n_train + res.n_test == 180);
  // Default holdout keeps a fifth of the data.
  CHECK(res.n_test == 36);
  REQUIRE(res.epoch_losses.size() == static_cast<std::size_t>(cfg.epochs));
  CHECK(res.epoch_losses.front() > res.epoch_losses.back());
}

TEST_CASE("full-batch descent without momentum decreases the loss") {
  const auto blobs = make_blobs(4, 120, 2.0, 0.8, 12);
  probe::ProbeConfig cfg;
  cfg.epochs = 40;
  cfg.lr = 0.1;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.step_milestones.clear();
  cfg.batch_size = 1024;  // larger than the training split: one batch
  cfg.seed = 5;
  const auto res = probe::train_probe(blobs.features, blobs.labels, 4, cfg);
  for (std::size_t e = 1; e < res.epoch_losses.size(); ++e) {
    REQUIRE(res.epoch_losses[e] <= res.epoch_losses[e - 1] + 1e-12);
  }
}

TEST_CASE("probe training is deterministic in the seed") {
  const auto blobs = make_blobs(3, 90, 3.0, 0.6, 13);
  probe::ProbeConfig cfg;
  cfg.seed = 7;
  const auto a = probe::train_probe(blobs.features, blobs.labels, 3, cfg);
  const auto b = probe::train_probe(blobs.features, blobs.labels, 3, cfg);
  CHECK(a.top1 == b.top1);
  CHECK(a.epoch_losses == b.epoch_losses);

  cfg.seed = 8;
  const auto c = probe::train_probe(blobs.features, blobs.labels, 3, cfg);
  CHECK(c.epoch_losses != a.epoch_losses);
}

TEST_CASE("milestones cut the learning rate") {
  // With an absurd base lr the probe diverges unless the schedule brings it
  // down; this only checks the schedule is wired, not convergence quality.
  const auto blobs = make_blobs(2, 60, 3.0, 0.4, 14);
  probe::ProbeConfig slow;
  slow.epochs = 6;
  slow.lr = 0.5;
  slow.gamma = 0.01;
  slow.step_milestones = {1};
  slow.seed = 5;
  probe::ProbeConfig fast = slow;
  fast.step_milestones = {};
  const auto a = probe::train_probe(blobs.features, blobs.labels, 2, slow);
  const auto b = probe::train_probe(blobs.features, blobs.labels, 2, fast);
  // Identical first epoch (same lr), different afterwards.
  CHECK(a.epoch_losses[0] == b.epoch_losses[0]);
  CHECK(a.epoch_losses[2] != b.epoch_losses[2]);
}

TEST_CASE("degenerate inputs are rejected") {
  const auto blobs = make_blobs(3, 30, 3.0, 0.5, 15);
  probe::ProbeConfig cfg;
  cfg.seed = 5;

  std::vector<int> one_class(30, 0);
  CHECK_THROWS_AS(probe::train_probe(blobs.features, one_class, 3, cfg),
                  ConfigError);

  std::vector<int> bad_label = blobs.labels;
  bad_label[4] = 17;
  CHECK_THROWS_AS(probe::train_probe(blobs.features, bad_label, 3, cfg),
                  ConfigError);

  std::vector<int> short_labels(29, 0);
  CHECK_THROWS_AS(probe::train_probe(blobs.features, short_labels, 3, cfg),
                  ShapeError);

  probe::ProbeConfig bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(probe::train_probe(blobs.features, blobs.labels, 3, bad),
                  ConfigError);
  bad = cfg;
  bad.lr = 0.0;
  CHECK_THROWS_AS(probe::train_probe(blobs.features, blobs.labels, 3, bad),
                  ConfigError);
  bad = cfg;
  bad.holdout_fraction = 1.0;
  CHECK_THROWS_AS(probe::train_probe(blobs.features, blobs.labels, 3, bad),
                  ConfigError);
  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(probe::train_probe(blobs.features, blobs.labels, 3, bad),
                  ConfigError);
}

TEST_CASE("feature extraction is the network embedding") {
  engine::NetTopology topo;
  topo.input_dim = 6;
  topo.embed_dim = 4;
  topo.n_prototypes = 3;
  topo.layers.push_back({6, 5, engine::Activation::relu});
  topo.layers.push_back({5, 4, engine::Activation::linear});
  const auto net = engine::init_net(topo, 31);

  Matrix x(7, 6);
  Rng rng(mix_key({31, 2}));
  for (double& v : x.data) {
    v = rng.gaussian();
  }
  const Matrix f = probe::extract_features(net, x);
  const Matrix z = engine::embed(net, x);
  CHECK(f.data == z.data);
  CHECK(f.rows == 7);
  CHECK(f.cols == 4);
}
