// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0
//
// shardtrain: sharded self-supervised training on one desk machine.
// Exit codes: 0 success, 2 configuration error, 3 numeric failure,
// 4 I/O or protocol failure.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "shardtrain/ckptplan.hpp"
#include "shardtrain/ckptstore.hpp"
#include "shardtrain/errors.hpp"
#include "shardtrain/fabric.hpp"
#include "shardtrain/fsdp.hpp"
#include "shardtrain/netspec.hpp"
#include "shardtrain/probe.hpp"
#include "shardtrain/runconfig.hpp"
#include "shardtrain/trainer.hpp"

namespace {

using shardtrain::ConfigError;
using shardtrain::IoError;

nlohmann::json read_json_input(const std::string& path) {
  nlohmann::json j;
  try {
    if (path.empty() || path == "-") {
      std::cin >> j;
    } else {
      std::ifstream in(path);
      if (!in) {
        throw IoError("cannot open " + path);
      }
      in >> j;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid JSON input: ") + e.what());
  }
  return j;
}

shardtrain::runconfig::RunConfig load_config(const std::string& path) {
  if (path.empty()) {
    return shardtrain::runconfig::toy_default();
  }
  return shardtrain::runconfig::load_file(path);
}

shardtrain::fabric::Mode resolve_mode(const std::string& flag) {
  if (flag.empty()) {
    return shardtrain::fabric::mode_from_env();
  }
  if (flag == "sim") {
    return shardtrain::fabric::Mode::sim;
  }
  if (flag == "parallel") {
    return shardtrain::fabric::Mode::parallel;
  }
  throw ConfigError("--mode must be 'sim' or 'parallel'");
}

std::vector<double> num_array(const nlohmann::json& j, const char* key,
                              bool required) {
  if (!j.contains(key)) {
    if (required) {
      throw ConfigError(std::string("input is missing \"") + key + "\"");
    }
    return {};
  }
  if (!j.at(key).is_array()) {
    throw ConfigError(std::string("\"") + key + "\" must be an array");
  }
  std::vector<double> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_number()) {
      throw ConfigError(std::string("\"") + key +
                        "\" must hold numbers only");
    }
    out.push_back(v.get<double>());
  }
  return out;
}

int cmd_train(const std::string& config_path, const std::string& mode_flag,
              bool resume) {
  const auto cfg = load_config(config_path);
  const auto mode = resolve_mode(mode_flag);
  shardtrain::trainer::train_run(cfg, mode, &std::cout, resume);
  return 0;
}

int cmd_plan(const std::string& input_path) {
  const nlohmann::json in = read_json_input(input_path);
  const std::vector<double> m_raw = num_array(in, "m", true);
  if (!in.contains("budget") || !in.at("budget").is_number_integer()) {
    throw ConfigError("input is missing an integer \"budget\"");
  }
  const std::uint64_t budget = in.at("budget").get<std::uint64_t>();
  std::vector<std::uint64_t> m;
  for (double v : m_raw) {
    if (v < 1.0) {
      throw ConfigError("\"m\" entries must be positive byte counts");
    }
    m.push_back(static_cast<std::uint64_t>(v));
  }
  std::vector<double> flops = num_array(in, "flops", false);
  if (flops.empty()) {
    flops.assign(m_raw.begin(), m_raw.end());
  }
  if (flops.size() != m.size()) {
    throw ConfigError("\"flops\" must match \"m\" in length");
  }

  const auto res = shardtrain::ckptplan::auto_plan(m, budget);
  if (!res.plan.has_value()) {
    throw ConfigError(
        "budget of " + std::to_string(budget) +
        " bytes is infeasible; the smallest achievable peak is " +
        std::to_string(res.min_achievable_peak) + " bytes");
  }
  nlohmann::json out;
  out["boundaries"] = res.plan->boundaries;
  out["n_segments"] = res.plan->n_segments;
  out["minimax_sum"] = res.plan->minimax_sum;
  out["modeled_peak"] = res.plan->modeled_peak;
  out["recompute_flops"] =
      shardtrain::ckptplan::recompute_flops(*res.plan, flops);
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_reshard(const std::string& in_dir, const std::string& out_dir,
                const std::string& direction, int world) {
  if (direction == "to-slices") {
    shardtrain::ckptstore::consolidate_to_sliced(in_dir, out_dir);
  } else if (direction == "to-shards") {
    if (world < 1) {
      throw ConfigError("--world must be at least 1 for to-shards");
    }
    shardtrain::ckptstore::slices_to_shards(in_dir, out_dir, world);
  } else {
    throw ConfigError("--mode must be 'to-slices' or 'to-shards'");
  }
  return 0;
}

int cmd_probe(const std::string& slices_dir, const std::string& config_path) {
  const auto cfg = load_config(config_path);
  const auto topo = cfg.topology();
  const auto state =
      shardtrain::ckptstore::dense_from_sliced(slices_dir, topo);
  const auto ds = shardtrain::swav::synth_dataset(
      cfg.data.n_clusters, cfg.data.dim, cfg.data.n_samples, cfg.data.spread,
      cfg.seed);
  const auto features =
      shardtrain::probe::extract_features(state.net, ds.samples);
  shardtrain::probe::ProbeConfig pc;
  pc.seed = cfg.seed;
  const auto res = shardtrain::probe::train_probe(features, ds.labels,
                                                  ds.n_clusters, pc);
  nlohmann::json out;
  out["top1"] = res.top1;
  out["n_train"] = res.n_train;
  out["n_test"] = res.n_test;
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_widths(double w0, double wa, double wm, int depth, int group) {
  shardtrain::netspec::RegnetConfig rc;
  rc.w0 = w0;
  rc.wa = wa;
  rc.wm = wm;
  rc.total_depth = depth;
  rc.group_width = group;
  const auto table = shardtrain::netspec::generate_widths(rc);
  std::cout << "stage,width,depth\n";
  for (std::size_t s = 0; s < table.widths.size(); ++s) {
    std::cout << s << "," << table.widths[s] << "," << table.depths[s]
              << "\n";
  }
  return 0;
}

int cmd_simulate_schedule(const std::string& input_path) {
  const nlohmann::json in = read_json_input(input_path);
  std::vector<double> comm = num_array(in, "comm", true);
  const std::vector<double> compute = num_array(in, "compute", true);
  bool prefetch = true;
  if (in.contains("prefetch")) {
    if (!in.at("prefetch").is_boolean()) {
      throw ConfigError("\"prefetch\" must be a boolean");
    }
    prefetch = in.at("prefetch").get<bool>();
  }
  if (in.contains("fp16")) {
    if (!in.at("fp16").is_boolean()) {
      throw ConfigError("\"fp16\" must be a boolean");
    }
    if (in.at("fp16").get<bool>()) {
      for (double& c : comm) {
        c *= 0.5;
      }
    }
  }
  const auto res = shardtrain::fsdp::simulate_schedule(comm, compute,
                                                       prefetch);
  nlohmann::json out;
  out["makespan"] = res.makespan;
  nlohmann::json events = nlohmann::json::array();
  for (const auto& ev : res.events) {
    nlohmann::json row;
    row["op"] = ev.op;
    row["layer"] = ev.layer;
    row["t_start"] = ev.t_start;
    row["t_end"] = ev.t_end;
    events.push_back(row);
  }
  out["events"] = events;
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_default_config() {
  std::cout << shardtrain::runconfig::toy_default().to_json().dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sharded self-supervised training, desk scale"};
  app.require_subcommand(1);

  std::string config_path;
  std::string mode_flag;
  bool resume = false;
  auto* train = app.add_subcommand("train", "run a training job");
  train->add_option("--config", config_path,
                    "run config JSON (omit for the built-in toy run)");
  train->add_option("--mode", mode_flag,
                    "execution mode: sim or parallel (default: "
                    "SHARDTRAIN_MODE, then sim)");
  train->add_flag("--resume", resume, "continue from the newest checkpoint");

  std::string plan_input;
  auto* plan = app.add_subcommand(
      "plan", "pick a checkpoint partition for a memory budget");
  plan->add_option("--input", plan_input,
                   "JSON file with m/budget/flops (default: stdin)");

  std::string reshard_in;
  std::string reshard_out;
  std::string reshard_mode;
  int reshard_world = 0;
  auto* reshard =
      app.add_subcommand("reshard", "convert checkpoints between layouts");
  reshard->add_option("--in", reshard_in, "input checkpoint directory")
      ->required();
  reshard->add_option("--out", reshard_out, "output directory")->required();
  reshard->add_option("--mode", reshard_mode, "to-slices or to-shards")
      ->required();
  reshard->add_option("--world", reshard_world,
                      "target world size (to-shards only)");

  std::string probe_slices;
  std::string probe_config;
  auto* probe = app.add_subcommand(
      "probe", "linear evaluation of a sliced checkpoint");
  probe->add_option("--slices", probe_slices, "sliced checkpoint directory")
      ->required();
  probe->add_option("--config", probe_config,
                    "run config JSON (omit for the built-in toy run)");

  double w0 = 456.0;
  double wa = 160.83;
  double wm = 2.52;
  int depth = 27;
  int group = 264;
  auto* widths =
      app.add_subcommand("widths", "print the quantized stage table as CSV");
  widths->add_option("--w0", w0, "ramp intercept");
  widths->add_option("--wa", wa, "ramp slope");
  widths->add_option("--wm", wm, "width multiplier");
  widths->add_option("--depth", depth, "total block count");
  widths->add_option("--group-width", group, "channel group width");

  std::string sched_input;
  auto* sched = app.add_subcommand(
      "simulate-schedule", "model gather/compute overlap for one sweep");
  sched->add_option("--input", sched_input,
                    "JSON file with comm/compute/prefetch/fp16 "
                    "(default: stdin)");

  auto* defcfg = app.add_subcommand("default-config",
                                    "print the built-in toy run config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (train->parsed()) {
      return cmd_train(config_path, mode_flag, resume);
    }
    if (plan->parsed()) {
      return cmd_plan(plan_input);
    }
    if (reshard->parsed()) {
      return cmd_reshard(reshard_in, reshard_out, reshard_mode,
                         reshard_world);
    }
    if (probe->parsed()) {
      return cmd_probe(probe_slices, probe_config);
    }
    if (widths->parsed()) {
      return cmd_widths(w0, wa, wm, depth, group);
    }
    if (sched->parsed()) {
      return cmd_simulate_schedule(sched_input);
    }
    if (defcfg->parsed()) {
      return cmd_default_config();
    }
  } catch (const shardtrain::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const shardtrain::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const shardtrain::Error& e) {
    // I/O, format, protocol, world mismatch, deadlock.
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
