// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#include "shardtrain/runconfig.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <string>

#include "shardtrain/errors.hpp"

namespace shardtrain::runconfig {

namespace {

void check_keys(const nlohmann::json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw ConfigError("config: unknown key at " + path + "/" + item.key());
    }
  }
}

const nlohmann::json* section(const nlohmann::json& j, const char* name) {
  if (!j.contains(name)) {
    return nullptr;
  }
  const nlohmann::json& s = j.at(name);
  if (!s.is_object()) {
    throw ConfigError(std::string("config: expected an object at /") + name);
  }
  return &s;
}

double num_at(const nlohmann::json& obj, const std::string& path,
              const char* key, double dflt) {
  if (!obj.contains(key)) {
    return dflt;
  }
  const nlohmann::json& v = obj.at(key);
  if (!v.is_number()) {
    throw ConfigError("config: expected a number at " + path + "/" + key);
  }
  return v.get<double>();
}

long int_at(const nlohmann::json& obj, const std::string& path,
            const char* key, long dflt) {
  if (!obj.contains(key)) {
    return dflt;
  }
  const nlohmann::json& v = obj.at(key);
  if (!v.is_number_integer()) {
    throw ConfigError("config: expected an integer at " + path + "/" + key);
  }
  return v.get<long>();
}

std::uint64_t uint_at(const nlohmann::json& obj, const std::string& path,
                      const char* key, std::uint64_t dflt) {
  if (!obj.contains(key)) {
    return dflt;
  }
  const nlohmann::json& v = obj.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
    throw ConfigError("config: expected a nonnegative integer at " + path +
                      "/" + key);
  }
  return v.get<std::uint64_t>();
}

std::string str_at(const nlohmann::json& obj, const std::string& path,
                   const char* key, const std::string& dflt) {
  if (!obj.contains(key)) {
    return dflt;
  }
  const nlohmann::json& v = obj.at(key);
  if (!v.is_string()) {
    throw ConfigError("config: expected a string at " + path + "/" + key);
  }
  return v.get<std::string>();
}

std::vector<int> int_array_at(const nlohmann::json& obj,
                              const std::string& path, const char* key,
                              const std::vector<int>& dflt) {
  if (!obj.contains(key)) {
    return dflt;
  }
  const nlohmann::json& v = obj.at(key);
  if (!v.is_array()) {
    throw ConfigError("config: expected an array at " + path + "/" + key);
  }
  std::vector<int> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number_integer()) {
      throw ConfigError("config: expected an integer at " + path + "/" +
                        key + "/" + std::to_string(i));
    }
    out.push_back(v[i].get<int>());
  }
  return out;
}

}  // namespace

void RunConfig::validate() const {
  if (world_size < 1) {
    throw ConfigError("config: world_size must be at least 1");
  }
  if (batch_per_rank < 1) {
    throw ConfigError("config: batch_per_rank must be at least 1");
  }
  if (total_iters < 1) {
    throw ConfigError("config: total_iters must be at least 1");
  }
  if (checkpoint_every < 0) {
    throw ConfigError("config: checkpoint_every must be nonnegative");
  }
  if (optim.warmup_iters < 0 || optim.warmup_iters >= total_iters) {
    throw ConfigError("config: warmup_iters must lie in [0, total_iters)");
  }
  for (double v : {optim.lr_base, optim.lr_peak, optim.lr_final}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ConfigError("config: learning rates must be finite and "
                        "nonnegative");
    }
  }
  if (optim.momentum < 0.0 || optim.momentum >= 1.0) {
    throw ConfigError("config: momentum must lie in [0, 1)");
  }
  if (!std::isfinite(optim.weight_decay) || optim.weight_decay < 0.0) {
    throw ConfigError("config: weight_decay must be nonnegative");
  }
  if (!(optim.larc_eta > 0.0) || !std::isfinite(optim.larc_eta)) {
    throw ConfigError("config: larc_eta must be positive");
  }
  if (optim.larc_beta < 0.0 || !std::isfinite(optim.larc_beta)) {
    throw ConfigError("config: larc_beta must be nonnegative");
  }
  if (!std::isfinite(optim.larc_fallback) || optim.larc_fallback < 0.0) {
    throw ConfigError("config: larc_fallback must be nonnegative");
  }
  if (data.n_clusters < 2) {
    throw ConfigError("config: data.n_clusters must be at least 2");
  }
  if (data.dim < 1) {
    throw ConfigError("config: data.dim must be at least 1");
  }
  if (data.n_samples < data.n_clusters) {
    throw ConfigError("config: data.n_samples must cover every cluster");
  }
  if (!(data.spread > 0.0) || !std::isfinite(data.spread)) {
    throw ConfigError("config: data.spread must be positive");
  }
  swav::validate(swav);
  // Model parameters are validated where the widths are generated; building
  // the ModelSpec here makes a bad model section fail at config time.
  (void)model_spec();
}

netspec::ModelSpec RunConfig::model_spec() const {
  netspec::RegnetConfig rc;
  rc.w0 = model.w0;
  rc.wa = model.wa;
  rc.wm = model.wm;
  rc.total_depth = model.depth;
  rc.group_width = model.group_width;
  return netspec::toy_spec(rc, model.scale_divisor, model.head_dims,
                           swav.n_prototypes);
}

engine::NetTopology RunConfig::topology() const {
  return engine::topology_from_spec(model_spec(), data.dim);
}

optim::LrSchedule RunConfig::schedule() const {
  optim::LrSchedule s;
  s.base_lr = optim.lr_base;
  s.peak_lr = optim.lr_peak;
  s.final_lr = optim.lr_final;
  s.warmup_iters = optim.warmup_iters;
  s.total_iters = total_iters;
  return s;
}

optim::LarcConfig RunConfig::larc() const {
  optim::LarcConfig c;
  c.eta = optim.larc_eta;
  c.beta = optim.larc_beta;
  c.fallback = optim.larc_fallback;
  return c;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["model"]["w0"] = model.w0;
  j["model"]["wa"] = model.wa;
  j["model"]["wm"] = model.wm;
  j["model"]["depth"] = model.depth;
  j["model"]["group_width"] = model.group_width;
  j["model"]["scale_divisor"] = model.scale_divisor;
  j["model"]["head_dims"] = model.head_dims;
  j["swav"]["tau"] = swav.tau;
  j["swav"]["epsilon"] = swav.epsilon;
  j["swav"]["sinkhorn_iters"] = swav.n_sinkhorn_iters;
  j["swav"]["prototypes"] = swav.n_prototypes;
  j["swav"]["global_views"] = swav.n_global_views;
  j["swav"]["local_views"] = swav.n_local_views;
  j["swav"]["noise_scale"] = swav.noise_scale;
  j["swav"]["local_noise_scale"] = swav.local_noise_scale;
  j["swav"]["mask_keep_ratio"] = swav.mask_keep_ratio;
  j["optim"]["lr_base"] = optim.lr_base;
  j["optim"]["lr_peak"] = optim.lr_peak;
  j["optim"]["lr_final"] = optim.lr_final;
  j["optim"]["warmup_iters"] = optim.warmup_iters;
  j["optim"]["momentum"] = optim.momentum;
  j["optim"]["weight_decay"] = optim.weight_decay;
  j["optim"]["larc_eta"] = optim.larc_eta;
  j["optim"]["larc_beta"] = optim.larc_beta;
  j["optim"]["larc_fallback"] = optim.larc_fallback;
  j["data"]["n_clusters"] = data.n_clusters;
  j["data"]["dim"] = data.dim;
  j["data"]["n_samples"] = data.n_samples;
  j["data"]["spread"] = data.spread;
  j["world_size"] = world_size;
  j["batch_per_rank"] = batch_per_rank;
  j["total_iters"] = total_iters;
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["checkpoint_dir"] = checkpoint_dir;
  if (memory_budget_bytes.has_value()) {
    j["memory_budget_bytes"] = *memory_budget_bytes;
  }
  return j;
}

std::string RunConfig::config_hash() const {
  const std::string canon = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

RunConfig toy_default() {
  RunConfig c;
  c.model.w0 = 192.0;
  c.model.wa = 76.82;
  c.model.wm = 2.19;
  c.model.depth = 4;
  c.model.group_width = 56;
  c.model.scale_divisor = 14;
  c.model.head_dims = {32, 16};
  c.swav.tau = 0.1;
  c.swav.epsilon = 0.05;
  c.swav.n_sinkhorn_iters = 3;
  c.swav.n_prototypes = 16;
  c.swav.n_global_views = 2;
  c.swav.n_local_views = 4;
  c.swav.noise_scale = 0.05;
  c.swav.local_noise_scale = 2.0;
  c.swav.mask_keep_ratio = 0.6;
  c.optim.lr_base = 0.01;
  c.optim.lr_peak = 0.1;
  c.optim.lr_final = 0.001;
  c.optim.warmup_iters = 100;
  c.optim.momentum = 0.9;
  c.optim.weight_decay = 1e-5;
  c.optim.larc_eta = 0.01;
  c.optim.larc_beta = 0.005;
  c.optim.larc_fallback = 1.0;
  c.data.n_clusters = 4;
  c.data.dim = 32;
  c.data.n_samples = 512;
  c.data.spread = 0.08;
  c.world_size = 4;
  c.batch_per_rank = 16;
  c.total_iters = 500;
  c.seed = 7;
  c.checkpoint_every = 0;
  c.checkpoint_dir = "";
  return c;
}

RunConfig from_json(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw ConfigError("config: the document root must be an object");
  }
  check_keys(j, "",
             {"model", "swav", "optim", "data", "world_size",
              "batch_per_rank", "total_iters", "seed", "checkpoint_every",
              "checkpoint_dir", "memory_budget_bytes"});

  RunConfig c = toy_default();

  if (const nlohmann::json* m = section(j, "model")) {
    check_keys(*m, "/model",
               {"w0", "wa", "wm", "depth", "group_width", "scale_divisor",
                "head_dims"});
    c.model.w0 = num_at(*m, "/model", "w0", c.model.w0);
    c.model.wa = num_at(*m, "/model", "wa", c.model.wa);
    c.model.wm = num_at(*m, "/model", "wm", c.model.wm);
    c.model.depth =
        static_cast<int>(int_at(*m, "/model", "depth", c.model.depth));
    c.model.group_width = static_cast<int>(
        int_at(*m, "/model", "group_width", c.model.group_width));
    c.model.scale_divisor = static_cast<int>(
        int_at(*m, "/model", "scale_divisor", c.model.scale_divisor));
    c.model.head_dims =
        int_array_at(*m, "/model", "head_dims", c.model.head_dims);
  }

  if (const nlohmann::json* s = section(j, "swav")) {
    check_keys(*s, "/swav",
               {"tau", "epsilon", "sinkhorn_iters", "prototypes",
                "global_views", "local_views", "noise_scale",
                "local_noise_scale", "mask_keep_ratio"});
    c.swav.tau = num_at(*s, "/swav", "tau", c.swav.tau);
    c.swav.epsilon = num_at(*s, "/swav", "epsilon", c.swav.epsilon);
    c.swav.n_sinkhorn_iters = static_cast<int>(
        int_at(*s, "/swav", "sinkhorn_iters", c.swav.n_sinkhorn_iters));
    c.swav.n_prototypes = static_cast<int>(
        int_at(*s, "/swav", "prototypes", c.swav.n_prototypes));
    c.swav.n_global_views = static_cast<int>(
        int_at(*s, "/swav", "global_views", c.swav.n_global_views));
    c.swav.n_local_views = static_cast<int>(
        int_at(*s, "/swav", "local_views", c.swav.n_local_views));
    c.swav.noise_scale =
        num_at(*s, "/swav", "noise_scale", c.swav.noise_scale);
    c.swav.local_noise_scale =
        num_at(*s, "/swav", "local_noise_scale", c.swav.local_noise_scale);
    c.swav.mask_keep_ratio =
        num_at(*s, "/swav", "mask_keep_ratio", c.swav.mask_keep_ratio);
  }

  if (const nlohmann::json* o = section(j, "optim")) {
    check_keys(*o, "/optim",
               {"lr_base", "lr_peak", "lr_final", "warmup_iters", "momentum",
                "weight_decay", "larc_eta", "larc_beta", "larc_fallback"});
    c.optim.lr_base = num_at(*o, "/optim", "lr_base", c.optim.lr_base);
    c.optim.lr_peak = num_at(*o, "/optim", "lr_peak", c.optim.lr_peak);
    c.optim.lr_final = num_at(*o, "/optim", "lr_final", c.optim.lr_final);
    c.optim.warmup_iters =
        int_at(*o, "/optim", "warmup_iters", c.optim.warmup_iters);
    c.optim.momentum = num_at(*o, "/optim", "momentum", c.optim.momentum);
    c.optim.weight_decay =
        num_at(*o, "/optim", "weight_decay", c.optim.weight_decay);
    c.optim.larc_eta = num_at(*o, "/optim", "larc_eta", c.optim.larc_eta);
    c.optim.larc_beta = num_at(*o, "/optim", "larc_beta", c.optim.larc_beta);
    c.optim.larc_fallback =
        num_at(*o, "/optim", "larc_fallback", c.optim.larc_fallback);
  }

  if (const nlohmann::json* d = section(j, "data")) {
    check_keys(*d, "/data", {"n_clusters", "dim", "n_samples", "spread"});
    c.data.n_clusters = static_cast<int>(
        int_at(*d, "/data", "n_clusters", c.data.n_clusters));
    c.data.dim = static_cast<int>(int_at(*d, "/data", "dim", c.data.dim));
    c.data.n_samples = static_cast<int>(
        int_at(*d, "/data", "n_samples", c.data.n_samples));
    c.data.spread = num_at(*d, "/data", "spread", c.data.spread);
  }

  c.world_size =
      static_cast<int>(int_at(j, "", "world_size", c.world_size));
  c.batch_per_rank =
      static_cast<int>(int_at(j, "", "batch_per_rank", c.batch_per_rank));
  c.total_iters = int_at(j, "", "total_iters", c.total_iters);
  c.seed = uint_at(j, "", "seed", c.seed);
  c.checkpoint_every =
      int_at(j, "", "checkpoint_every", c.checkpoint_every);
  c.checkpoint_dir = str_at(j, "", "checkpoint_dir", c.checkpoint_dir);
  if (j.contains("memory_budget_bytes")) {
    c.memory_budget_bytes = uint_at(j, "", "memory_budget_bytes", 0);
  }

  c.validate();
  return c;
}

RunConfig load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open config file " + path.string());
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " +
                      e.what());
  }
  return from_json(j);
}

}  // namespace shardtrain::runconfig
