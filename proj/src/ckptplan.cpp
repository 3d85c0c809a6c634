// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#include "shardtrain/ckptplan.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "shardtrain/errors.hpp"

namespace shardtrain::ckptplan {

namespace {

void validate_m(const std::vector<std::uint64_t>& m) {
  if (m.empty()) {
    throw ConfigError("ckptplan: empty activation profile");
  }
  for (std::uint64_t v : m) {
    if (v == 0) {
      throw ConfigError("ckptplan: activation sizes must be positive");
    }
  }
}

}  // namespace

CheckpointPlan plan(const std::vector<std::uint64_t>& m,
                    std::size_t n_segments) {
  validate_m(m);
  const std::size_t n = m.size();
  if (n_segments < 1 || n_segments > n) {
    throw ConfigError("ckptplan: n_segments must be in [1, " +
                      std::to_string(n) + "], got " +
                      std::to_string(n_segments));
  }

  // prefix[i] = sum of m[0..i); segment [i, j) costs prefix[j] - prefix[i].
  std::vector<std::uint64_t> prefix(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    prefix[i + 1] = prefix[i] + m[i];
  }
  auto seg_cost = [&](std::size_t i, std::size_t j) {
    return prefix[j] - prefix[i];
  };

  // best[k][i]: minimal possible largest-segment sum when m[i..n) is split
  // into k segments. Filled for k = 1..n_segments over descending i.
  constexpr std::uint64_t kInf = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::vector<std::uint64_t>> best(
      n_segments + 1, std::vector<std::uint64_t>(n + 1, kInf));
  for (std::size_t i = 0; i <= n; ++i) {
    best[1][i] = seg_cost(i, n);
  }
  for (std::size_t k = 2; k <= n_segments; ++k) {
    // Splitting m[i..n) into k nonempty segments needs n - i >= k.
    for (std::size_t i = 0; i + k <= n; ++i) {
      std::uint64_t acc = kInf;
      for (std::size_t j = i + 1; j + (k - 1) <= n; ++j) {
        std::uint64_t v = std::max(seg_cost(i, j), best[k - 1][j]);
        acc = std::min(acc, v);
        // seg_cost grows with j; once it alone exceeds the best so far no
        // larger j can help.
        if (seg_cost(i, j) >= acc) {
          break;
        }
      }
      best[k][i] = acc;
    }
  }

  const std::uint64_t optimum = best[n_segments][0];

  // Lexicographically smallest boundary list among optimal partitions: at
  // each step take the smallest feasible next boundary. A prefix is feasible
  // when its own segment fits under the optimum and the suffix can still be
  // finished under it.
  CheckpointPlan p;
  p.n_layers = n;
  p.n_segments = n_segments;
  p.minimax_sum = optimum;
  std::size_t i = 0;
  for (std::size_t k = n_segments; k >= 2; --k) {
    for (std::size_t j = i + 1; j + (k - 1) <= n; ++j) {
      if (seg_cost(i, j) <= optimum && best[k - 1][j] <= optimum) {
        p.boundaries.push_back(j);
        i = j;
        break;
      }
    }
  }
  p.modeled_peak = simulate_peak(m, p);
  return p;
}

std::uint64_t simulate_peak(const std::vector<std::uint64_t>& m,
                            const CheckpointPlan& p) {
  validate_m(m);
  if (p.n_layers != m.size()) {
    throw ShapeError("simulate_peak: plan and profile disagree on layers");
  }
  if (p.boundaries.size() + 1 != p.n_segments) {
    throw ConfigError("simulate_peak: inconsistent plan");
  }
  std::size_t prev = 0;
  for (std::size_t b : p.boundaries) {
    if (b <= prev || b >= m.size()) {
      throw ConfigError("simulate_peak: boundaries must be strictly "
                        "increasing interior indices");
    }
    prev = b;
  }

  std::vector<std::size_t> starts;
  starts.push_back(0);
  for (std::size_t b : p.boundaries) {
    starts.push_back(b);
  }

  // All segment-start activations stay resident; on top of that the largest
  // segment is replayed in full minus its already-counted start.
  std::uint64_t retained = 0;
  for (std::size_t s : starts) {
    retained += m[s];
  }
  std::uint64_t worst_live = 0;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    std::size_t a = starts[k];
    std::size_t b = (k + 1 < starts.size()) ? starts[k + 1] : m.size();
    std::uint64_t seg = 0;
    for (std::size_t j = a; j < b; ++j) {
      seg += m[j];
    }
    worst_live = std::max(worst_live, seg - m[a]);
  }
  return retained + worst_live;
}

double recompute_flops(const CheckpointPlan& p,
                       const std::vector<double>& flops) {
  if (p.n_layers != flops.size()) {
    throw ShapeError("recompute_flops: plan and flops disagree on layers");
  }
  if (p.n_segments <= 1) {
    return 0.0;
  }
  double acc = 0.0;
  for (double f : flops) {
    acc += f;
  }
  return acc;
}

AutoPlanResult auto_plan(const std::vector<std::uint64_t>& m,
                         std::uint64_t budget_bytes) {
  validate_m(m);
  AutoPlanResult out;
  std::uint64_t best_peak = std::numeric_limits<std::uint64_t>::max();
  for (std::size_t k = 1; k <= m.size(); ++k) {
    CheckpointPlan p = plan(m, k);
    if (p.modeled_peak <= budget_bytes) {
      out.plan = std::move(p);
      out.min_achievable_peak = out.plan->modeled_peak;
      return out;
    }
    best_peak = std::min(best_peak, p.modeled_peak);
  }
  out.min_achievable_peak = best_peak;
  return out;
}

}  // namespace shardtrain::ckptplan
