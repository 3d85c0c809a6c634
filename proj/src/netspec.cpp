// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#include "shardtrain/netspec.hpp"

#include <cmath>
#include <string>

#include "shardtrain/errors.hpp"

namespace shardtrain::netspec {

namespace {

// Nearest integer, ties half-up. Inputs here are always positive, so
// round-half-away-from-zero coincides with half-up.
long long round_half_up(double x) { return std::llround(x); }

void validate(const RegnetConfig& cfg) {
  if (!(cfg.w0 > 0.0)) {
    throw ConfigError("regnet: w0 must be positive");
  }
  if (cfg.wa < 0.0) {
    throw ConfigError("regnet: wa must be nonnegative");
  }
  if (cfg.wa > 0.0 && !(cfg.wm > 1.0)) {
    throw ConfigError("regnet: wm must exceed 1 when wa > 0");
  }
  if (cfg.total_depth < 1) {
    throw ConfigError("regnet: total_depth must be at least 1");
  }
  if (cfg.group_width < 1) {
    throw ConfigError("regnet: group_width must be at least 1");
  }
}

}  // namespace

StageTable generate_widths(const RegnetConfig& cfg) {
  validate(cfg);
  std::vector<long long> per_block(static_cast<std::size_t>(cfg.total_depth));
  for (int j = 0; j < cfg.total_depth; ++j) {
    double u = cfg.w0 + cfg.wa * static_cast<double>(j);
    long long s = 0;
    if (cfg.wa > 0.0) {
      s = round_half_up(std::log(u / cfg.w0) / std::log(cfg.wm));
    }
    double cont = cfg.w0 * std::pow(cfg.wm, static_cast<double>(s));
    long long q = 8 * round_half_up(cont / 8.0);
    if (q < 8) {
      throw ConfigError("regnet: block width quantized below 8; w0 too small");
    }
    long long g = std::min<long long>(cfg.group_width, q);
    long long w = round_half_up(static_cast<double>(q) / static_cast<double>(g)) * g;
    per_block[static_cast<std::size_t>(j)] = w;
  }

  StageTable table;
  for (std::size_t j = 0; j < per_block.size(); ++j) {
    if (j > 0 && per_block[j] == per_block[j - 1]) {
      ++table.depths.back();
    } else {
      table.widths.push_back(static_cast<int>(per_block[j]));
      table.depths.push_back(1);
    }
  }
  return table;
}

std::vector<int> ModelSpec::layer_widths() const {
  std::vector<int> out;
  for (std::size_t s = 0; s < stage_widths.size(); ++s) {
    for (int d = 0; d < stage_depths[s]; ++d) {
      out.push_back(stage_widths[s]);
    }
  }
  for (int h : head_dims) {
    out.push_back(h);
  }
  return out;
}

int ModelSpec::embed_dim() const {
  if (!head_dims.empty()) {
    return head_dims.back();
  }
  return stage_widths.back();
}

ModelSpec toy_spec(const RegnetConfig& cfg, int scale_divisor,
                   std::vector<int> head_dims, int n_prototypes) {
  StageTable table = generate_widths(cfg);
  if (scale_divisor < 1) {
    throw ConfigError("toy_spec: scale_divisor must be at least 1");
  }
  int min_width = table.widths.front();
  for (int w : table.widths) {
    min_width = std::min(min_width, w);
  }
  if (scale_divisor > min_width) {
    throw ConfigError("toy_spec: scale_divisor " +
                      std::to_string(scale_divisor) +
                      " exceeds the smallest stage width " +
                      std::to_string(min_width));
  }
  for (int h : head_dims) {
    if (h < 1) {
      throw ConfigError("toy_spec: head dimensions must be positive");
    }
  }
  if (n_prototypes < 1) {
    throw ConfigError("toy_spec: n_prototypes must be at least 1");
  }

  ModelSpec spec;
  for (int w : table.widths) {
    double scaled = static_cast<double>(w) / static_cast<double>(scale_divisor);
    long long sw = std::llround(scaled);
    spec.stage_widths.push_back(static_cast<int>(std::max<long long>(1, sw)));
  }
  spec.stage_depths = table.depths;
  spec.head_dims = std::move(head_dims);
  spec.n_prototypes = n_prototypes;
  return spec;
}

ActivationProfile activation_profile(const ModelSpec& spec, int batch,
                                     int bytes_per_elem) {
  if (batch < 1) {
    throw ConfigError("activation_profile: batch must be at least 1");
  }
  if (bytes_per_elem != 4 && bytes_per_elem != 8) {
    throw ConfigError("activation_profile: bytes_per_elem must be 4 or 8");
  }
  ActivationProfile profile;
  profile.batch = batch;
  profile.bytes_per_elem = bytes_per_elem;
  for (int w : spec.layer_widths()) {
    profile.m.push_back(static_cast<std::uint64_t>(batch) *
                        static_cast<std::uint64_t>(w) *
                        static_cast<std::uint64_t>(bytes_per_elem));
  }
  return profile;
}

}  // namespace shardtrain::netspec
