// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "shardtrain/errors.hpp"
#include "shardtrain/linalg.hpp"
#include "shardtrain/rng.hpp"
#include "shardtrain/swav.hpp"

using namespace shardtrain;
using doctest::Approx;

namespace {

Matrix random_scores(std::size_t K, std::size_t B, Rng& rng, double amp) {
  Matrix s(K, B);
  for (double& v : s.data) {
    v = amp * rng.uniform();
  }
  return s;
}

// Left-to-right column sum, the exact chain the normalizer pins.
double colsum(const Matrix& q, std::size_t b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < q.rows; ++k) {
    acc += q.at(k, b);
  }
  return acc;
}

double rowsum(const Matrix& q, std::size_t k) {
  double acc = 0.0;
  for (std::size_t b = 0; b < q.cols; ++b) {
    acc += q.at(k, b);
  }
  return acc;
}

}  // namespace

TEST_CASE("sinkhorn pins every column sum exactly") {
  swav::SwavConfig cfg;
  cfg.epsilon = 0.05;
  cfg.n_sinkhorn_iters = 3;
  Rng rng(mix_key({7, 70}));
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t K = 1 + rng.below(24);
    const std::size_t B = 1 + rng.below(24);
    const double amp = std::pow(10.0, -1.0 + rng.uniform_pos());
    const Matrix s = random_scores(K, B, rng, amp);
    const Matrix q = swav::sinkhorn(s, cfg);
    const double target = 1.0 / static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b) {
      REQUIRE(std::bit_cast<std::uint64_t>(colsum(q, b)) ==
              std::bit_cast<std::uint64_t>(target));
    }
    for (double v : q.data) {
      REQUIRE(v >= 0.0);
      REQUIRE(std::isfinite(v));
    }
  }
}

TEST_CASE("sinkhorn row sums converge to the uniform target") {
  swav::SwavConfig cfg;
  cfg.epsilon = 0.05;
  cfg.n_sinkhorn_iters = 1000;
  Rng rng(mix_key({7, 71}));
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t K = 2 + rng.below(14);
    const std::size_t B = 2 + rng.below(30);
    const Matrix s = random_scores(K, B, rng, 1.0);
    const Matrix q = swav::sinkhorn(s, cfg);
    const double row_target = 1.0 / static_cast<double>(K);
    for (std::size_t k = 0; k < K; ++k) {
      REQUIRE(rowsum(q, k) == Approx(row_target).epsilon(1e-6));
    }
  }
}

TEST_CASE("sinkhorn is invariant to a global score shift") {
  swav::SwavConfig cfg;
  cfg.epsilon = 0.05;
  cfg.n_sinkhorn_iters = 3;
  Rng rng(mix_key({7, 72}));
  const Matrix s = random_scores(12, 20, rng, 1.0);
  Matrix shifted = s;
  for (double& v : shifted.data) {
    v += 3.7;
  }
  const Matrix q0 = swav::sinkhorn(s, cfg);
  const Matrix q1 = swav::sinkhorn(shifted, cfg);
  for (std::size_t i = 0; i < q0.data.size(); ++i) {
    CHECK(std::abs(q0.data[i] - q1.data[i]) <= 1e-12);
  }
}

TEST_CASE("uniform scores give uniform codes and loss ln K") {
  swav::SwavConfig cfg;
  cfg.tau = 0.1;
  cfg.epsilon = 0.05;
  cfg.n_sinkhorn_iters = 3;
  cfg.n_global_views = 2;
  const std::size_t K = 16, B = 8;
  Matrix s(K, B);
  for (double& v : s.data) {
    v = 0.25;
  }
  const Matrix q = swav::sinkhorn(s, cfg);
  const double uniform = 1.0 / static_cast<double>(K * B);
  for (double v : q.data) {
    CHECK(v == Approx(uniform).epsilon(1e-12));
  }

  const std::vector<Matrix> scores{s, s, s};
  const std::vector<Matrix> codes{q, q};
  const auto res = swav::swav_loss_with_codes(scores, codes, cfg);
  CHECK(res.loss ==
        Approx(std::log(static_cast<double>(K))).epsilon(1e-12));
  REQUIRE(res.score_grads.size() == 3);
  for (const Matrix& g : res.score_grads) {
    for (double v : g.data) {
      CHECK(std::abs(v) <= 1e-12);
    }
  }
}

TEST_CASE("loss and gradients match a naive scalar evaluation") {
  swav::SwavConfig cfg;
  cfg.tau = 0.17;
  cfg.epsilon = 0.06;
  cfg.n_sinkhorn_iters = 3;
  cfg.n_global_views = 2;
  const std::size_t K = 7, B = 5, n_views = 4;
  Rng rng(mix_key({7, 73}));
  std::vector<Matrix> scores;
  for (std::size_t v = 0; v < n_views; ++v) {
    scores.push_back(random_scores(K, B, rng, 1.0));
  }
  std::vector<Matrix> codes;
  for (std::size_t i = 0; i < 2; ++i) {
    codes.push_back(swav::sinkhorn(scores[i], cfg));
  }
  const auto res = swav::swav_loss_with_codes(scores, codes, cfg);

  // Naive re-evaluation: softmax per column without shared code, loss as a
  // flat double loop, gradients from the closed form (p / B - q) per pair.
  auto naive_softmax = [&](const Matrix& sc) {
    Matrix p(K, B);
    for (std::size_t b = 0; b < B; ++b) {
      double denom = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        denom += std::exp(sc.at(k, b) / cfg.tau);
      }
      for (std::size_t k = 0; k < K; ++k) {
        p.at(k, b) = std::exp(sc.at(k, b) / cfg.tau) / denom;
      }
    }
    return p;
  };
  double loss = 0.0;
  std::vector<Matrix> grads(n_views, Matrix(K, B));
  const double n_pairs = 2.0 * (n_views - 1);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t v = 0; v < n_views; ++v) {
      if (v == i) continue;
      const Matrix p = naive_softmax(scores[v]);
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t b = 0; b < B; ++b) {
          loss -= codes[i].at(k, b) * std::log(p.at(k, b));
          grads[v].at(k, b) +=
              (p.at(k, b) / static_cast<double>(B) - codes[i].at(k, b)) /
              (cfg.tau * n_pairs);
        }
      }
    }
  }
  loss /= n_pairs;

  CHECK(res.loss == Approx(loss).epsilon(1e-12));
  for (std::size_t v = 0; v < n_views; ++v) {
    for (std::size_t i = 0; i < K * B; ++i) {
      CHECK(res.score_grads[v].data[i] ==
            Approx(grads[v].data[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("the wrapper reproduces the explicit score-code pipeline") {
  swav::SwavConfig cfg;
  cfg.n_sinkhorn_iters = 3;
  cfg.n_global_views = 2;
  const std::size_t K = 6, D = 5, B = 4;
  Rng rng(mix_key({7, 74}));
  Matrix protos(K, D);
  for (double& v : protos.data) {
    v = rng.gaussian();
  }
  std::vector<Matrix> embeds;
  for (int v = 0; v < 3; ++v) {
    Matrix z(B, D);
    for (double& x : z.data) {
      x = rng.gaussian();
    }
    embeds.push_back(std::move(z));
  }

  const auto got = swav::swav_loss(embeds, protos, cfg);

  std::vector<Matrix> scores;
  for (const Matrix& z : embeds) {
    scores.push_back(matmul_bt(protos, z));
  }
  std::vector<Matrix> codes{swav::sinkhorn(scores[0], cfg),
                            swav::sinkhorn(scores[1], cfg)};
  const auto want = swav::swav_loss_with_codes(scores, codes, cfg);

  CHECK(got.loss == want.loss);
  for (std::size_t v = 0; v < scores.size(); ++v) {
    CHECK(got.score_grads[v].data == want.score_grads[v].data);
  }
}

TEST_CASE("make_views is a pure function of the rng key") {
  swav::SwavConfig cfg;
  cfg.n_global_views = 2;
  cfg.n_local_views = 4;
  cfg.noise_scale = 0.05;
  cfg.local_noise_scale = 2.0;
  cfg.mask_keep_ratio = 0.6;
  const std::size_t dim = 16;
  std::vector<double> sample(dim);
  Rng data_rng(mix_key({7, 75}));
  for (double& v : sample) {
    v = data_rng.gaussian();
  }

  Rng r1(mix_key({11, 3}));
  Rng r2(mix_key({11, 3}));
  const auto views1 = swav::make_views(sample, cfg, r1);
  const auto views2 = swav::make_views(sample, cfg, r2);
  REQUIRE(views1.size() == 6);
  REQUIRE(views1 == views2);

  // Global views are full-dimension noisy copies; each local view zeroes
  // exactly dim - round(keep * dim) coordinates.
  const auto keep = static_cast<std::size_t>(std::llround(0.6 * dim));
  for (std::size_t v = 0; v < views1.size(); ++v) {
    REQUIRE(views1[v].size() == dim);
    std::size_t zeros = 0;
    for (double x : views1[v]) {
      if (x == 0.0) ++zeros;
    }
    if (v < 2) {
      CHECK(zeros == 0);
      for (std::size_t d = 0; d < dim; ++d) {
        CHECK(std::abs(views1[v][d] - sample[d]) < 1.0);
      }
    } else {
      CHECK(zeros == dim - keep);
    }
  }

  // A different key moves every unmasked coordinate.
  Rng r3(mix_key({11, 4}));
  const auto views3 = swav::make_views(sample, cfg, r3);
  CHECK(views3[0] != views1[0]);
}

TEST_CASE("synthetic dataset geometry") {
  const auto ds = swav::synth_dataset(4, 16, 64, 0.08, 42);
  REQUIRE(ds.samples.rows == 64);
  REQUIRE(ds.samples.cols == 16);
  REQUIRE(ds.means.rows == 4);
  REQUIRE(ds.labels.size() == 64);
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(ds.labels[i] == static_cast<int>(i % 4));
  }
  for (std::size_t c = 0; c < 4; ++c) {
    double sq = 0.0;
    for (std::size_t d = 0; d < 16; ++d) {
      sq += ds.means.at(c, d) * ds.means.at(c, d);
    }
    CHECK(std::sqrt(sq) == Approx(1.0).epsilon(1e-12));
  }
  // Samples hug their cluster mean: expected offset norm is
  // spread * sqrt(dim) = 0.32.
  double mean_dist = 0.0;
  for (std::size_t i = 0; i < 64; ++i) {
    double sq = 0.0;
    for (std::size_t d = 0; d < 16; ++d) {
      const double diff =
          ds.samples.at(i, d) - ds.means.at(static_cast<std::size_t>(ds.labels[i]), d);
      sq += diff * diff;
    }
    mean_dist += std::sqrt(sq);
  }
  mean_dist /= 64.0;
  CHECK(mean_dist > 0.15);
  CHECK(mean_dist < 0.5);

  const auto again = swav::synth_dataset(4, 16, 64, 0.08, 42);
  CHECK(again.samples.data == ds.samples.data);
  const auto other = swav::synth_dataset(4, 16, 64, 0.08, 43);
  CHECK(other.samples.data != ds.samples.data);
}

TEST_CASE("degenerate and invalid inputs are rejected") {
  swav::SwavConfig cfg;
  cfg.epsilon = 0.05;
  cfg.n_sinkhorn_iters = 3;

  // One column underflows to zero mass after the global max shift.
  Matrix s(2, 2);
  s.at(0, 0) = 0.0;
  s.at(1, 0) = 0.0;
  s.at(0, 1) = -1.0e5;
  s.at(1, 1) = -1.0e5;
  CHECK_THROWS_AS(swav::sinkhorn(s, cfg), NumericError);

  Matrix bad(2, 2);
  bad.at(0, 0) = std::nan("");
  CHECK_THROWS_AS(swav::sinkhorn(bad, cfg), NumericError);

  CHECK_THROWS_AS(swav::sinkhorn(Matrix(0, 0), cfg), ShapeError);

  swav::SwavConfig c2 = cfg;
  c2.tau = 0.0;
  CHECK_THROWS_AS(swav::validate(c2), ConfigError);
  c2 = cfg;
  c2.epsilon = -1.0;
  CHECK_THROWS_AS(swav::validate(c2), ConfigError);
  c2 = cfg;
  c2.n_prototypes = 1;
  CHECK_THROWS_AS(swav::validate(c2), ConfigError);
  c2 = cfg;
  c2.n_global_views = 1;
  c2.n_local_views = 0;
  CHECK_THROWS_AS(swav::validate(c2), ConfigError);
  c2 = cfg;
  c2.mask_keep_ratio = 0.0;
  CHECK_THROWS_AS(swav::validate(c2), ConfigError);
  c2 = cfg;
  c2.mask_keep_ratio = 1.5;
  CHECK_THROWS_AS(swav::validate(c2), ConfigError);

  CHECK_THROWS_AS(
      swav::swav_loss_with_codes({Matrix(2, 2)}, {Matrix(2, 2)}, cfg),
      ConfigError);
}
