// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "shardtrain/ckptplan.hpp"
#include "shardtrain/linalg.hpp"
#include "shardtrain/netspec.hpp"

namespace shardtrain::engine {

enum class Activation { linear, relu };

// One dense layer: y = act(x W + b). Parameters are stored flat, W row-major
// (in_dim x out_dim) followed by the bias.
struct LayerDef {
  int in_dim = 0;
  int out_dim = 0;
  Activation act = Activation::relu;
};

// Parameter slots are the unit of sharding, reduction and checkpointing:
// one per dense layer plus a final slot for the prototype bank.
struct NetTopology {
  std::vector<LayerDef> layers;
  int input_dim = 0;
  int embed_dim = 0;
  int n_prototypes = 0;

  std::size_t n_slots() const { return layers.size() + 1; }
  std::size_t prototype_slot() const { return layers.size(); }
  std::size_t slot_param_count(std::size_t slot) const;
};

NetTopology topology_from_spec(const netspec::ModelSpec& spec, int input_dim);

struct LayeredNet {
  NetTopology topo;
  // params[slot]: flat parameters for that slot.
  std::vector<std::vector<double>> params;
};

// Deterministic initialization, independent of world size: every slot draws
// from its own keyed stream. Prototype rows start unit-norm.
LayeredNet init_net(const NetTopology& topo, std::uint64_t seed);

// In-place row normalization, used for prototypes at init and after every
// update.
void normalize_rows(std::span<double> flat, std::size_t rows,
                    std::size_t cols);

// --- shared per-layer primitives -------------------------------------------
// Both the dense baseline and the sharded path run these exact functions on
// the exact same operand values; bitwise agreement between the two paths
// rests on that.

Matrix layer_forward(const LayerDef& def, std::span<const double> flat,
                     const Matrix& x);

struct LayerGrads {
  std::vector<double> flat;  // dW then db, same layout as the parameters
  Matrix dx;
};

LayerGrads layer_backward(const LayerDef& def, std::span<const double> flat,
                          const Matrix& x, const Matrix& y, const Matrix& dy);

// Embedding head: L2-normalize rows of y (epsilon-guarded under the root),
// then score against prototype rows.
struct HeadOut {
  Matrix z;                   // batch x embed, unit rows
  std::vector<double> norms;  // per row, sqrt(|y|^2 + 1e-12)
  Matrix scores;              // prototypes x batch
};

HeadOut head_forward(const Matrix& y, std::span<const double> prototypes,
                     std::size_t n_prototypes);

struct HeadGrads {
  std::vector<double> d_prototypes;
  Matrix dy;
};

HeadGrads head_backward(const Matrix& z, const std::vector<double>& norms,
                        std::span<const double> prototypes,
                        std::size_t n_prototypes, const Matrix& score_grads);

// --- whole-net passes -------------------------------------------------------

// Activations captured by a forward pass. outs[l] is layer l's output; under
// a checkpoint plan only segment inputs are retained and the rest are
// recomputed during backward. The head products (z, norms, scores) are
// always kept.
struct BatchActivations {
  Matrix input;
  std::vector<std::optional<Matrix>> outs;
  HeadOut head;
};

BatchActivations forward(const LayeredNet& net, const Matrix& input,
                         const ckptplan::CheckpointPlan* plan);

struct Gradients {
  std::vector<std::vector<double>> slots;
};

// Backward from d loss / d scores. With a plan, segments are replayed from
// their retained inputs in reverse order; without one, every activation must
// have been retained.
Gradients backward(const LayeredNet& net, const BatchActivations& acts,
                   const Matrix& score_grads,
                   const ckptplan::CheckpointPlan* plan);

// Embeddings only (for feature extraction): z rows for each input row.
Matrix embed(const LayeredNet& net, const Matrix& input);

}  // namespace shardtrain::engine
