// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace shardtrain::ckptplan {

// A partition of layers [0, n_layers) into n_segments consecutive segments.
// boundaries holds the interior segment start indices, strictly increasing,
// each in (0, n_layers); n_segments == boundaries.size() + 1. During the
// backward pass only segment inputs stay resident; everything else is
// recomputed segment by segment.
struct CheckpointPlan {
  std::vector<std::size_t> boundaries;
  std::size_t n_layers = 0;
  std::size_t n_segments = 1;
  std::uint64_t minimax_sum = 0;
  std::uint64_t modeled_peak = 0;
  double recompute_flops = 0.0;
};

// Optimal minimax partition of m into n_segments consecutive segments:
// minimizes the largest per-segment sum. Among optimal partitions the
// lexicographically smallest boundary list is returned. O(S * n^2).
CheckpointPlan plan(const std::vector<std::uint64_t>& m,
                    std::size_t n_segments);

// Modeled peak memory of a backward pass under the plan: all retained
// segment inputs stay resident while the largest segment is replayed.
//   peak = stashed segment inputs (slot 0 and each boundary) + max segment
// With one segment nothing is freed and the peak is sum(m).
std::uint64_t simulate_peak(const std::vector<std::uint64_t>& m,
                            const CheckpointPlan& p);

// Total forward flops replayed during backward: zero for a single segment,
// otherwise every layer is recomputed once.
double recompute_flops(const CheckpointPlan& p,
                       const std::vector<double>& flops);

// Smallest segment count whose modeled peak fits the budget. When no count
// fits, plan is empty and min_achievable_peak names the best possible peak.
struct AutoPlanResult {
  std::optional<CheckpointPlan> plan;
  std::uint64_t min_achievable_peak = 0;
};

AutoPlanResult auto_plan(const std::vector<std::uint64_t>& m,
                         std::uint64_t budget_bytes);

}  // namespace shardtrain::ckptplan
