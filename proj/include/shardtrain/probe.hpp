// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0
//
// Linear evaluation probe: a multinomial logistic regression trained on
// frozen embeddings with SGD, momentum, coupled weight decay and a stepped
// learning-rate schedule. The split and every shuffle are counter-seeded,
// so a probe run is a pure function of (features, labels, config).

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "shardtrain/engine.hpp"
#include "shardtrain/linalg.hpp"

namespace shardtrain::probe {

struct ProbeConfig {
  int epochs = 28;
  double lr = 0.01;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  std::vector<int> step_milestones = {8, 16, 24};
  double gamma = 0.1;
  int batch_size = 256;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ProbeResult {
  double top1 = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  // Mean training loss per epoch, in epoch order.
  std::vector<double> epoch_losses;
};

// Frozen embeddings for a batch of raw samples, one row per sample.
Matrix extract_features(const engine::LayeredNet& net, const Matrix& samples);

// Trains the probe and reports holdout top-1 accuracy. Labels must cover at
// least two distinct classes and lie in [0, n_classes).
ProbeResult train_probe(const Matrix& features, std::span<const int> labels,
                        int n_classes, const ProbeConfig& cfg);

}  // namespace shardtrain::probe
