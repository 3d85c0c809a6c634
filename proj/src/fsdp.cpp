// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#include "shardtrain/fsdp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "shardtrain/errors.hpp"
#include "shardtrain/rng.hpp"

namespace shardtrain::fsdp {

std::size_t padded_shard_len(std::size_t full, int world_size) {
  if (world_size < 1) {
    throw ConfigError("padded_shard_len: world_size must be at least 1");
  }
  const auto w = static_cast<std::size_t>(world_size);
  return (full + w - 1) / w;
}

ShardedState shard_params(const engine::LayeredNet& net, int world_size,
                          int rank) {
  if (world_size < 1) {
    throw ConfigError("shard_params: world_size must be at least 1");
  }
  if (rank < 0 || rank >= world_size) {
    throw ConfigError("shard_params: rank outside [0, world_size)");
  }
  ShardedState st;
  st.topo = net.topo;
  st.world_size = world_size;
  st.rank = rank;
  st.slots.resize(net.topo.n_slots());
  for (std::size_t s = 0; s < st.slots.size(); ++s) {
    const std::vector<double>& full = net.params[s];
    const std::size_t sl = padded_shard_len(full.size(), world_size);
    SlotShard& shard = st.slots[s];
    shard.full_length = full.size();
    shard.weights.assign(sl, 0.0);
    shard.momentum.assign(sl, 0.0);
    const std::size_t lo = static_cast<std::size_t>(rank) * sl;
    for (std::size_t i = 0; i < sl && lo + i < full.size(); ++i) {
      shard.weights[i] = full[lo + i];
    }
  }
  return st;
}

DenseTrainState make_dense_state(const engine::LayeredNet& net) {
  DenseTrainState st;
  st.net = net;
  st.momentum.resize(net.params.size());
  for (std::size_t s = 0; s < net.params.size(); ++s) {
    st.momentum[s].assign(net.params[s].size(), 0.0);
  }
  return st;
}

DenseTrainState dense_from_shards(
    const std::vector<const ShardedState*>& shards) {
  if (shards.empty()) {
    throw ConfigError("dense_from_shards: no shards");
  }
  const int world = shards[0]->world_size;
  if (static_cast<std::size_t>(world) != shards.size()) {
    throw ConfigError("dense_from_shards: shard count differs from world "
                      "size");
  }
  for (int r = 0; r < world; ++r) {
    if (shards[static_cast<std::size_t>(r)]->rank != r) {
      throw ConfigError("dense_from_shards: shards must arrive in rank "
                        "order");
    }
    if (shards[static_cast<std::size_t>(r)]->slots.size() !=
        shards[0]->slots.size()) {
      throw ShapeError("dense_from_shards: slot counts differ across ranks");
    }
  }

  DenseTrainState st;
  st.net.topo = shards[0]->topo;
  const std::size_t n_slots = shards[0]->slots.size();
  st.net.params.resize(n_slots);
  st.momentum.resize(n_slots);
  for (std::size_t s = 0; s < n_slots; ++s) {
    const std::size_t full = shards[0]->slots[s].full_length;
    std::vector<double> w;
    std::vector<double> v;
    for (int r = 0; r < world; ++r) {
      const SlotShard& sh = shards[static_cast<std::size_t>(r)]->slots[s];
      if (sh.full_length != full) {
        throw ShapeError("dense_from_shards: full_length differs across "
                         "ranks");
      }
      w.insert(w.end(), sh.weights.begin(), sh.weights.end());
      v.insert(v.end(), sh.momentum.begin(), sh.momentum.end());
    }
    w.resize(full);
    v.resize(full);
    st.net.params[s] = std::move(w);
    st.momentum[s] = std::move(v);
  }
  return st;
}

std::vector<Matrix> build_view_batches(const Matrix& rows,
                                       std::span<const std::uint64_t> keys,
                                       const swav::SwavConfig& cfg, long iter,
                                       std::uint64_t seed) {
  if (rows.rows != keys.size()) {
    throw ShapeError("build_view_batches: rows and keys differ in length");
  }
  swav::validate(cfg);
  const std::size_t n_views =
      static_cast<std::size_t>(cfg.n_global_views + cfg.n_local_views);
  std::vector<Matrix> out(n_views, Matrix(rows.rows, rows.cols));
  for (std::size_t i = 0; i < rows.rows; ++i) {
    Rng rng(mix_key(
        {seed, streams::kViews, static_cast<std::uint64_t>(iter), keys[i]}));
    std::vector<std::vector<double>> views = swav::make_views(
        std::span<const double>(rows.row(i), rows.cols), cfg, rng);
    for (std::size_t v = 0; v < n_views; ++v) {
      for (std::size_t d = 0; d < rows.cols; ++d) {
        out[v].at(i, d) = views[v][d];
      }
    }
  }
  return out;
}

namespace {

struct ViewActs {
  std::vector<std::optional<Matrix>> outs;
  Matrix z;
  std::vector<double> norms;
};

void check_step_config(const engine::NetTopology& topo,
                       const StepConfig& cfg) {
  swav::validate(cfg.swav);
  if (cfg.swav.n_prototypes != topo.n_prototypes) {
    throw ConfigError("step: swav prototype count differs from the network");
  }
  if (!(cfg.momentum >= 0.0) || cfg.momentum >= 1.0) {
    throw ConfigError("step: momentum must lie in [0, 1)");
  }
  if (cfg.weight_decay < 0.0) {
    throw ConfigError("step: weight_decay must be nonnegative");
  }
}

}  // namespace

double fsdp_train_step(ShardedState& st, fabric::WorldHandle& h,
                       const Matrix& local_batch,
                       std::span<const std::uint64_t> local_keys,
                       const StepConfig& cfg,
                       const ckptplan::CheckpointPlan* plan) {
  const engine::NetTopology& topo = st.topo;
  const std::size_t L = topo.layers.size();
  const std::size_t proto_slot = topo.prototype_slot();
  const std::size_t n_slots = topo.n_slots();
  if (st.slots.size() != n_slots) {
    throw StateError("fsdp_train_step: sharded state is inconsistent");
  }
  if (st.world_size != h.world_size() || st.rank != h.rank()) {
    throw StateError("fsdp_train_step: state does not match the fabric");
  }
  if (local_batch.rows == 0 || local_batch.rows != local_keys.size()) {
    throw ShapeError("fsdp_train_step: bad local batch");
  }
  if (local_batch.cols != static_cast<std::size_t>(topo.input_dim)) {
    throw ShapeError("fsdp_train_step: input dim mismatch");
  }
  check_step_config(topo, cfg);
  if (plan != nullptr && plan->n_layers != L) {
    throw ShapeError("fsdp_train_step: plan layer count differs from "
                     "network");
  }

  h.set_step(cfg.iter);
  const std::size_t b = local_batch.rows;
  const auto K = static_cast<std::size_t>(topo.n_prototypes);
  const auto D = static_cast<std::size_t>(topo.embed_dim);
  const int W = h.world_size();
  const auto rank = static_cast<std::size_t>(h.rank());

  std::vector<Matrix> views =
      build_view_batches(local_batch, local_keys, cfg.swav, cfg.iter,
                         cfg.seed);
  const std::size_t V = views.size();

  auto gather_slot = [&](std::size_t slot) {
    h.log_marker("unshard", static_cast<int>(slot));
    std::vector<double> full =
        h.all_gather(st.slots[slot].weights, static_cast<int>(slot));
    full.resize(st.slots[slot].full_length);
    return full;
  };
  auto release_slot = [&](std::size_t slot) {
    h.log_marker("reshard", static_cast<int>(slot));
  };

  // The prototype bank stays materialized from scoring through its gradient.
  std::vector<double> proto = gather_slot(proto_slot);

  std::vector<char> retain(L, plan == nullptr ? 1 : 0);
  if (plan != nullptr) {
    for (std::size_t p : plan->boundaries) {
      retain[p - 1] = 1;
    }
  }

  std::vector<ViewActs> acts(V);
  std::vector<Matrix> global_scores(V);
  for (std::size_t v = 0; v < V; ++v) {
    h.log_marker("view_fwd_begin", static_cast<int>(v));
    acts[v].outs.resize(L);
    Matrix cur = views[v];
    // Prefetch depth 1: layer l+1 is gathered before layer l computes, so at
    // most two layers are unsharded at any point in the sweep.
    std::vector<double> cur_params = gather_slot(0);
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<double> next_params;
      if (l + 1 < L) {
        next_params = gather_slot(l + 1);
      }
      Matrix y = engine::layer_forward(topo.layers[l], cur_params, cur);
      release_slot(l);
      cur_params = std::move(next_params);
      if (retain[l]) {
        acts[v].outs[l] = y;
      }
      cur = std::move(y);
    }
    engine::HeadOut ho = engine::head_forward(cur, proto, K);
    acts[v].z = std::move(ho.z);
    acts[v].norms = std::move(ho.norms);
    h.log_marker("view_fwd_end", static_cast<int>(v));

    // Score columns cross ranks; sinkhorn and the loss see the global batch.
    std::vector<double> flat = h.all_gather(ho.scores.data, -1);
    Matrix gs(K, static_cast<std::size_t>(W) * b);
    for (std::size_t r = 0; r < static_cast<std::size_t>(W); ++r) {
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < b; ++j) {
          gs.at(k, r * b + j) = flat[r * (K * b) + k * b + j];
        }
      }
    }
    global_scores[v] = std::move(gs);
  }

  const auto n_global = static_cast<std::size_t>(cfg.swav.n_global_views);
  std::vector<Matrix> codes;
  codes.reserve(n_global);
  for (std::size_t i = 0; i < n_global; ++i) {
    codes.push_back(swav::sinkhorn(global_scores[i], cfg.swav));
  }
  swav::LossResult res =
      swav::swav_loss_with_codes(global_scores, codes, cfg.swav);

  std::vector<std::vector<double>> gacc(n_slots);
  for (std::size_t s = 0; s < n_slots; ++s) {
    gacc[s].assign(st.slots[s].full_length, 0.0);
  }

  std::vector<std::size_t> starts{0};
  if (plan != nullptr) {
    for (std::size_t p : plan->boundaries) {
      starts.push_back(p);
    }
  }

  for (std::size_t v = 0; v < V; ++v) {
    const Matrix& g_global = res.score_grads[v];
    Matrix g_local(K, b);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 0; j < b; ++j) {
        g_local.at(k, j) = g_global.at(k, rank * b + j);
      }
    }
    engine::HeadGrads hgr =
        engine::head_backward(acts[v].z, acts[v].norms, proto, K, g_local);
    {
      std::vector<double>& acc = gacc[proto_slot];
      for (std::size_t i = 0; i < acc.size(); ++i) {
        acc[i] += hgr.d_prototypes[i];
      }
    }
    Matrix dy = std::move(hgr.dy);

    for (std::size_t s = starts.size(); s-- > 0;) {
      const std::size_t a = starts[s];
      const std::size_t bend =
          (s + 1 < starts.size()) ? starts[s + 1] : L;
      const Matrix& seg_input =
          (a == 0) ? views[v] : acts[v].outs[a - 1].value();

      // Under a plan the segment is replayed from its retained input; each
      // replayed layer costs one extra gather on top of the backward gather.
      std::vector<Matrix> replay;
      const bool replaying = plan != nullptr;
      if (replaying) {
        replay.resize(bend - a);
        const Matrix* curp = &seg_input;
        for (std::size_t l = a; l < bend; ++l) {
          std::vector<double> pl = gather_slot(l);
          replay[l - a] = engine::layer_forward(topo.layers[l], pl, *curp);
          release_slot(l);
          curp = &replay[l - a];
        }
      }
      for (std::size_t l = bend; l-- > a;) {
        const Matrix& x =
            (l == a) ? seg_input
                     : (replaying ? replay[l - a - 1]
                                  : acts[v].outs[l - 1].value());
        const Matrix& y = replaying ? replay[l - a] : acts[v].outs[l].value();
        std::vector<double> pl = gather_slot(l);
        engine::LayerGrads lg =
            engine::layer_backward(topo.layers[l], pl, x, y, dy);
        release_slot(l);
        std::vector<double>& acc = gacc[l];
        for (std::size_t i = 0; i < acc.size(); ++i) {
          acc[i] += lg.flat[i];
        }
        dy = std::move(lg.dx);
      }
    }
  }
  release_slot(proto_slot);

  // Gradients leave through one reduce_scatter per slot, highest slot first.
  std::vector<std::vector<double>> gshard(n_slots);
  for (std::size_t s = n_slots; s-- > 0;) {
    const std::size_t sl = padded_shard_len(st.slots[s].full_length, W);
    std::vector<double> padded = std::move(gacc[s]);
    padded.resize(sl * static_cast<std::size_t>(W), 0.0);
    gshard[s] = h.reduce_scatter(padded, static_cast<int>(s));
  }

  std::vector<std::span<const double>> wsp;
  std::vector<std::span<const double>> gsp;
  wsp.reserve(n_slots);
  gsp.reserve(n_slots);
  for (std::size_t s = 0; s < n_slots; ++s) {
    wsp.emplace_back(st.slots[s].weights);
    gsp.emplace_back(gshard[s]);
  }
  std::vector<optim::LayerNorms> norms =
      optim::distributed_norms(wsp, gsp, h);

  const double lr = optim::schedule_lr(cfg.iter, cfg.sched);
  for (std::size_t s = 0; s < n_slots; ++s) {
    const double lambda =
        optim::larc_coeff(norms[s].w_norm, norms[s].g_norm, cfg.larc);
    const double lr_eff = lr * lambda;
    optim::sgd_step(st.slots[s].weights, gshard[s], st.slots[s].momentum,
                    lr_eff, cfg.weight_decay, cfg.momentum);
  }

  // Prototype rows return to unit norm; every rank normalizes the same
  // gathered bank and keeps its slice.
  {
    std::vector<double> full = gather_slot(proto_slot);
    engine::normalize_rows(full, K, D);
    const std::size_t sl =
        padded_shard_len(st.slots[proto_slot].full_length, W);
    std::vector<double>& wshard = st.slots[proto_slot].weights;
    const std::size_t lo = rank * sl;
    for (std::size_t i = 0; i < sl; ++i) {
      const std::size_t gi = lo + i;
      wshard[i] = (gi < full.size()) ? full[gi] : 0.0;
    }
    release_slot(proto_slot);
  }

  return res.loss;
}

double ddp_baseline_step(DenseTrainState& st, const Matrix& global_batch,
                         std::span<const std::uint64_t> keys,
                         int virtual_world, const StepConfig& cfg) {
  const engine::NetTopology& topo = st.net.topo;
  const std::size_t L = topo.layers.size();
  const std::size_t proto_slot = topo.prototype_slot();
  const std::size_t n_slots = topo.n_slots();
  if (virtual_world < 1) {
    throw ConfigError("ddp_baseline_step: virtual_world must be at least 1");
  }
  if (global_batch.rows == 0 ||
      global_batch.rows % static_cast<std::size_t>(virtual_world) != 0) {
    throw ConfigError("ddp_baseline_step: batch must split evenly across "
                      "virtual ranks");
  }
  if (global_batch.rows != keys.size()) {
    throw ShapeError("ddp_baseline_step: batch and keys differ in length");
  }
  if (global_batch.cols != static_cast<std::size_t>(topo.input_dim)) {
    throw ShapeError("ddp_baseline_step: input dim mismatch");
  }
  check_step_config(topo, cfg);

  const auto W = static_cast<std::size_t>(virtual_world);
  const std::size_t b = global_batch.rows / W;
  const auto K = static_cast<std::size_t>(topo.n_prototypes);
  const auto D = static_cast<std::size_t>(topo.embed_dim);
  const std::vector<double>& proto = st.net.params[proto_slot];

  // Per-rank forward over the same views the sharded path builds.
  std::vector<std::vector<Matrix>> views(W);
  std::vector<std::vector<ViewActs>> acts(W);
  std::size_t n_views = 0;
  for (std::size_t r = 0; r < W; ++r) {
    Matrix rows(b, global_batch.cols);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t d = 0; d < global_batch.cols; ++d) {
        rows.at(i, d) = global_batch.at(r * b + i, d);
      }
    }
    views[r] = build_view_batches(rows, keys.subspan(r * b, b), cfg.swav,
                                  cfg.iter, cfg.seed);
    n_views = views[r].size();
    acts[r].resize(n_views);
  }

  std::vector<Matrix> global_scores(
      n_views, Matrix(K, global_batch.rows));
  for (std::size_t r = 0; r < W; ++r) {
    for (std::size_t v = 0; v < n_views; ++v) {
      ViewActs& va = acts[r][v];
      va.outs.resize(L);
      Matrix cur = views[r][v];
      for (std::size_t l = 0; l < L; ++l) {
        Matrix y = engine::layer_forward(topo.layers[l], st.net.params[l],
                                         cur);
        va.outs[l] = y;
        cur = std::move(y);
      }
      engine::HeadOut ho = engine::head_forward(cur, proto, K);
      va.z = std::move(ho.z);
      va.norms = std::move(ho.norms);
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < b; ++j) {
          global_scores[v].at(k, r * b + j) = ho.scores.at(k, j);
        }
      }
    }
  }

  const auto n_global = static_cast<std::size_t>(cfg.swav.n_global_views);
  std::vector<Matrix> codes;
  codes.reserve(n_global);
  for (std::size_t i = 0; i < n_global; ++i) {
    codes.push_back(swav::sinkhorn(global_scores[i], cfg.swav));
  }
  swav::LossResult res =
      swav::swav_loss_with_codes(global_scores, codes, cfg.swav);

  // Per-rank gradient partials, in the exact per-element accumulation order
  // of the sharded path.
  std::vector<std::vector<std::vector<double>>> gacc(W);
  for (std::size_t r = 0; r < W; ++r) {
    gacc[r].resize(n_slots);
    for (std::size_t s = 0; s < n_slots; ++s) {
      gacc[r][s].assign(st.net.params[s].size(), 0.0);
    }
    for (std::size_t v = 0; v < n_views; ++v) {
      const Matrix& g_global = res.score_grads[v];
      Matrix g_local(K, b);
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < b; ++j) {
          g_local.at(k, j) = g_global.at(k, r * b + j);
        }
      }
      ViewActs& va = acts[r][v];
      engine::HeadGrads hgr =
          engine::head_backward(va.z, va.norms, proto, K, g_local);
      {
        std::vector<double>& acc = gacc[r][proto_slot];
        for (std::size_t i = 0; i < acc.size(); ++i) {
          acc[i] += hgr.d_prototypes[i];
        }
      }
      Matrix dy = std::move(hgr.dy);
      for (std::size_t l = L; l-- > 0;) {
        const Matrix& x = (l == 0) ? views[r][v] : va.outs[l - 1].value();
        const Matrix& y = va.outs[l].value();
        engine::LayerGrads lg =
            engine::layer_backward(topo.layers[l], st.net.params[l], x, y,
                                   dy);
        std::vector<double>& acc = gacc[r][l];
        for (std::size_t i = 0; i < acc.size(); ++i) {
          acc[i] += lg.flat[i];
        }
        dy = std::move(lg.dx);
      }
    }
  }

  // Cross-rank fold in ascending rank order, exactly like reduce_scatter.
  std::vector<std::vector<double>> grad_full(n_slots);
  for (std::size_t s = 0; s < n_slots; ++s) {
    grad_full[s] = gacc[0][s];
    for (std::size_t r = 1; r < W; ++r) {
      const std::vector<double>& part = gacc[r][s];
      for (std::size_t i = 0; i < part.size(); ++i) {
        grad_full[s][i] += part[i];
      }
    }
  }

  std::vector<std::span<const double>> wsp;
  std::vector<std::span<const double>> gsp;
  wsp.reserve(n_slots);
  gsp.reserve(n_slots);
  for (std::size_t s = 0; s < n_slots; ++s) {
    wsp.emplace_back(st.net.params[s]);
    gsp.emplace_back(grad_full[s]);
  }
  std::vector<optim::LayerNorms> norms =
      optim::chunked_norms(wsp, gsp, virtual_world);

  const double lr = optim::schedule_lr(cfg.iter, cfg.sched);
  for (std::size_t s = 0; s < n_slots; ++s) {
    const double lambda =
        optim::larc_coeff(norms[s].w_norm, norms[s].g_norm, cfg.larc);
    const double lr_eff = lr * lambda;
    optim::sgd_step(st.net.params[s], grad_full[s], st.momentum[s], lr_eff,
                    cfg.weight_decay, cfg.momentum);
  }

  engine::normalize_rows(st.net.params[proto_slot], K, D);
  return res.loss;
}

ScheduleResult simulate_schedule(std::span<const double> comm_cost,
                                 std::span<const double> compute_cost,
                                 bool prefetch) {
  if (comm_cost.size() != compute_cost.size()) {
    throw ShapeError("simulate_schedule: cost vectors differ in length");
  }
  if (comm_cost.empty()) {
    throw ConfigError("simulate_schedule: no layers");
  }
  for (std::size_t l = 0; l < comm_cost.size(); ++l) {
    if (!(comm_cost[l] >= 0.0) || !(compute_cost[l] >= 0.0) ||
        !std::isfinite(comm_cost[l]) || !std::isfinite(compute_cost[l])) {
      throw ConfigError("simulate_schedule: costs must be finite and "
                        "nonnegative");
    }
  }

  ScheduleResult out;
  const std::size_t L = comm_cost.size();
  if (!prefetch) {
    double t = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      out.events.push_back({"all_gather", l, t, t + comm_cost[l]});
      t += comm_cost[l];
      out.events.push_back({"compute", l, t, t + compute_cost[l]});
      t += compute_cost[l];
    }
    out.makespan = t;
    return out;
  }

  double comm_t = 0.0;
  double compute_t = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    const double ag_start = comm_t;
    const double ag_end = ag_start + comm_cost[l];
    comm_t = ag_end;
    out.events.push_back({"all_gather", l, ag_start, ag_end});
    const double c_start = std::max(ag_end, compute_t);
    const double c_end = c_start + compute_cost[l];
    compute_t = c_end;
    out.events.push_back({"compute", l, c_start, c_end});
  }
  out.makespan = compute_t;
  return out;
}

}  // namespace shardtrain::fsdp
