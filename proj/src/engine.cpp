// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#include "shardtrain/engine.hpp"

#include <cmath>
#include <string>

#include "shardtrain/errors.hpp"
#include "shardtrain/rng.hpp"

namespace shardtrain::engine {

namespace {

constexpr double kNormGuard = 1e-12;

std::vector<std::size_t> segment_starts(const ckptplan::CheckpointPlan* plan,
                                        std::size_t n_layers) {
  std::vector<std::size_t> starts{0};
  if (plan != nullptr) {
    if (plan->n_layers != n_layers) {
      throw ShapeError("engine: plan layer count differs from network");
    }
    for (std::size_t b : plan->boundaries) {
      starts.push_back(b);
    }
  }
  return starts;
}

}  // namespace

std::size_t NetTopology::slot_param_count(std::size_t slot) const {
  if (slot < layers.size()) {
    const LayerDef& d = layers[slot];
    return static_cast<std::size_t>(d.in_dim) *
               static_cast<std::size_t>(d.out_dim) +
           static_cast<std::size_t>(d.out_dim);
  }
  if (slot == layers.size()) {
    return static_cast<std::size_t>(n_prototypes) *
           static_cast<std::size_t>(embed_dim);
  }
  throw ConfigError("slot_param_count: slot out of range");
}

NetTopology topology_from_spec(const netspec::ModelSpec& spec,
                               int input_dim) {
  if (input_dim < 1) {
    throw ConfigError("topology: input_dim must be at least 1");
  }
  std::vector<int> widths = spec.layer_widths();
  if (widths.empty()) {
    throw ConfigError("topology: network has no layers");
  }
  NetTopology topo;
  topo.input_dim = input_dim;
  topo.embed_dim = spec.embed_dim();
  topo.n_prototypes = spec.n_prototypes;
  int in = input_dim;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    LayerDef def;
    def.in_dim = in;
    def.out_dim = widths[l];
    // The final projection stays linear so embeddings cover both signs.
    def.act = (l + 1 == widths.size()) ? Activation::linear
                                       : Activation::relu;
    topo.layers.push_back(def);
    in = widths[l];
  }
  return topo;
}

void normalize_rows(std::span<double> flat, std::size_t rows,
                    std::size_t cols) {
  if (flat.size() != rows * cols) {
    throw ShapeError("normalize_rows: length mismatch");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      double v = flat[r * cols + c];
      ss += v * v;
    }
    double norm = std::sqrt(ss);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw NumericError("normalize_rows: degenerate row " +
                         std::to_string(r));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      flat[r * cols + c] /= norm;
    }
  }
}

LayeredNet init_net(const NetTopology& topo, std::uint64_t seed) {
  LayeredNet net;
  net.topo = topo;
  net.params.resize(topo.n_slots());
  for (std::size_t slot = 0; slot < topo.layers.size(); ++slot) {
    const LayerDef& def = topo.layers[slot];
    Rng rng(mix_key({seed, streams::kInit, slot}));
    const auto n_w = static_cast<std::size_t>(def.in_dim) *
                     static_cast<std::size_t>(def.out_dim);
    std::vector<double>& p = net.params[slot];
    p.assign(topo.slot_param_count(slot), 0.0);
    const double scale =
        def.act == Activation::relu
            ? std::sqrt(2.0 / static_cast<double>(def.in_dim))
            : std::sqrt(1.0 / static_cast<double>(def.in_dim));
    for (std::size_t i = 0; i < n_w; ++i) {
      p[i] = scale * rng.gaussian();
    }
    // Biases start at zero.
  }
  {
    const std::size_t slot = topo.prototype_slot();
    Rng rng(mix_key({seed, streams::kInit, slot}));
    std::vector<double>& p = net.params[slot];
    p.assign(topo.slot_param_count(slot), 0.0);
    for (double& v : p) {
      v = rng.gaussian();
    }
    normalize_rows(p, static_cast<std::size_t>(topo.n_prototypes),
                   static_cast<std::size_t>(topo.embed_dim));
  }
  return net;
}

Matrix layer_forward(const LayerDef& def, std::span<const double> flat,
                     const Matrix& x) {
  const auto in = static_cast<std::size_t>(def.in_dim);
  const auto out = static_cast<std::size_t>(def.out_dim);
  if (x.cols != in) {
    throw ShapeError("layer_forward: input dim mismatch");
  }
  if (flat.size() != in * out + out) {
    throw ShapeError("layer_forward: parameter length mismatch");
  }
  const double* w = flat.data();
  const double* bias = flat.data() + in * out;
  Matrix y(x.rows, out);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < out; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < in; ++k) {
        acc += x.at(i, k) * w[k * out + j];
      }
      acc += bias[j];
      if (def.act == Activation::relu && acc < 0.0) {
        acc = 0.0;
      }
      y.at(i, j) = acc;
    }
  }
  return y;
}

LayerGrads layer_backward(const LayerDef& def, std::span<const double> flat,
                          const Matrix& x, const Matrix& y, const Matrix& dy) {
  const auto in = static_cast<std::size_t>(def.in_dim);
  const auto out = static_cast<std::size_t>(def.out_dim);
  if (x.cols != in || y.cols != out || dy.cols != out || x.rows != y.rows ||
      x.rows != dy.rows) {
    throw ShapeError("layer_backward: shape mismatch");
  }
  if (flat.size() != in * out + out) {
    throw ShapeError("layer_backward: parameter length mismatch");
  }
  const double* w = flat.data();

  // Relu zeroes the gradient wherever the output clamped; y > 0 identifies
  // the pass-through entries.
  Matrix dpre(dy.rows, out);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    for (std::size_t j = 0; j < out; ++j) {
      double g = dy.at(i, j);
      if (def.act == Activation::relu && !(y.at(i, j) > 0.0)) {
        g = 0.0;
      }
      dpre.at(i, j) = g;
    }
  }

  LayerGrads grads;
  grads.flat.assign(in * out + out, 0.0);
  double* dw = grads.flat.data();
  double* db = grads.flat.data() + in * out;
  for (std::size_t k = 0; k < in; ++k) {
    for (std::size_t j = 0; j < out; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < x.rows; ++i) {
        acc += x.at(i, k) * dpre.at(i, j);
      }
      dw[k * out + j] = acc;
    }
  }
  for (std::size_t j = 0; j < out; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dpre.rows; ++i) {
      acc += dpre.at(i, j);
    }
    db[j] = acc;
  }

  grads.dx = Matrix(x.rows, in);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t k = 0; k < in; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < out; ++j) {
        acc += dpre.at(i, j) * w[k * out + j];
      }
      grads.dx.at(i, k) = acc;
    }
  }
  return grads;
}

HeadOut head_forward(const Matrix& y, std::span<const double> prototypes,
                     std::size_t n_prototypes) {
  const std::size_t dim = y.cols;
  if (prototypes.size() != n_prototypes * dim) {
    throw ShapeError("head_forward: prototype length mismatch");
  }
  HeadOut h;
  h.z = Matrix(y.rows, dim);
  h.norms.resize(y.rows);
  for (std::size_t i = 0; i < y.rows; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      ss += y.at(i, j) * y.at(i, j);
    }
    double n = std::sqrt(ss + kNormGuard);
    h.norms[i] = n;
    for (std::size_t j = 0; j < dim; ++j) {
      h.z.at(i, j) = y.at(i, j) / n;
    }
  }
  h.scores = Matrix(n_prototypes, y.rows);
  for (std::size_t k = 0; k < n_prototypes; ++k) {
    const double* c = prototypes.data() + k * dim;
    for (std::size_t b = 0; b < y.rows; ++b) {
      double acc = 0.0;
      const double* zr = h.z.row(b);
      for (std::size_t j = 0; j < dim; ++j) {
        acc += c[j] * zr[j];
      }
      h.scores.at(k, b) = acc;
    }
  }
  return h;
}

HeadGrads head_backward(const Matrix& z, const std::vector<double>& norms,
                        std::span<const double> prototypes,
                        std::size_t n_prototypes, const Matrix& score_grads) {
  const std::size_t batch = z.rows;
  const std::size_t dim = z.cols;
  if (score_grads.rows != n_prototypes || score_grads.cols != batch) {
    throw ShapeError("head_backward: score gradient shape mismatch");
  }
  if (prototypes.size() != n_prototypes * dim || norms.size() != batch) {
    throw ShapeError("head_backward: operand shape mismatch");
  }

  HeadGrads out;
  out.d_prototypes.assign(n_prototypes * dim, 0.0);
  for (std::size_t k = 0; k < n_prototypes; ++k) {
    for (std::size_t j = 0; j < dim; ++j) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        acc += score_grads.at(k, b) * z.at(b, j);
      }
      out.d_prototypes[k * dim + j] = acc;
    }
  }

  // dz then back through the normalization: for row b with norm n,
  // dy = (dz - (dz . z) z) / n.
  out.dy = Matrix(batch, dim);
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<double> dz(dim, 0.0);
    for (std::size_t j = 0; j < dim; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n_prototypes; ++k) {
        acc += score_grads.at(k, b) * prototypes[k * dim + j];
      }
      dz[j] = acc;
    }
    double dot = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      dot += dz[j] * z.at(b, j);
    }
    for (std::size_t j = 0; j < dim; ++j) {
      out.dy.at(b, j) = (dz[j] - dot * z.at(b, j)) / norms[b];
    }
  }
  return out;
}

BatchActivations forward(const LayeredNet& net, const Matrix& input,
                         const ckptplan::CheckpointPlan* plan) {
  const NetTopology& topo = net.topo;
  const std::size_t n_layers = topo.layers.size();
  std::vector<char> retain(n_layers, plan == nullptr ? 1 : 0);
  if (plan != nullptr) {
    if (plan->n_layers != n_layers) {
      throw ShapeError("forward: plan layer count differs from network");
    }
    // Each boundary p starts a segment whose replay input is out(p-1).
    for (std::size_t b : plan->boundaries) {
      retain[b - 1] = 1;
    }
  }

  BatchActivations acts;
  acts.input = input;
  acts.outs.resize(n_layers);
  Matrix cur = input;
  for (std::size_t l = 0; l < n_layers; ++l) {
    Matrix next = layer_forward(topo.layers[l], net.params[l], cur);
    cur = next;
    if (retain[l]) {
      acts.outs[l] = cur;
    }
  }
  acts.head = head_forward(cur, net.params[topo.prototype_slot()],
                           static_cast<std::size_t>(topo.n_prototypes));
  return acts;
}

Gradients backward(const LayeredNet& net, const BatchActivations& acts,
                   const Matrix& score_grads,
                   const ckptplan::CheckpointPlan* plan) {
  const NetTopology& topo = net.topo;
  const std::size_t n_layers = topo.layers.size();
  if (acts.outs.size() != n_layers) {
    throw ShapeError("backward: activation count differs from network");
  }
  if (plan == nullptr) {
    for (std::size_t l = 0; l < n_layers; ++l) {
      if (!acts.outs[l].has_value()) {
        throw StateError("backward: activation for layer " +
                         std::to_string(l) +
                         " missing and no checkpoint plan given");
      }
    }
  }

  Gradients grads;
  grads.slots.resize(topo.n_slots());

  HeadGrads hg = head_backward(
      acts.head.z, acts.head.norms, net.params[topo.prototype_slot()],
      static_cast<std::size_t>(topo.n_prototypes), score_grads);
  grads.slots[topo.prototype_slot()] = std::move(hg.d_prototypes);

  Matrix dy = std::move(hg.dy);

  if (plan == nullptr) {
    for (std::size_t l = n_layers; l-- > 0;) {
      const Matrix& x = (l == 0) ? acts.input : acts.outs[l - 1].value();
      const Matrix& y = acts.outs[l].value();
      LayerGrads lg = layer_backward(topo.layers[l], net.params[l], x, y, dy);
      grads.slots[l] = std::move(lg.flat);
      dy = std::move(lg.dx);
    }
    return grads;
  }

  // Segments are replayed from their retained inputs, last segment first.
  // The forward pass is deterministic, so replayed activations carry the
  // same bits the discarded originals had.
  std::vector<std::size_t> starts = segment_starts(plan, n_layers);
  for (std::size_t s = starts.size(); s-- > 0;) {
    const std::size_t a = starts[s];
    const std::size_t b = (s + 1 < starts.size()) ? starts[s + 1] : n_layers;
    if (a > 0 && !acts.outs[a - 1].has_value()) {
      throw StateError("backward: segment input for layer " +
                       std::to_string(a) + " was not retained");
    }
    const Matrix& seg_input =
        (a == 0) ? acts.input : acts.outs[a - 1].value();

    std::vector<Matrix> replay(b - a);
    {
      const Matrix* cur = &seg_input;
      for (std::size_t l = a; l < b; ++l) {
        replay[l - a] = layer_forward(topo.layers[l], net.params[l], *cur);
        cur = &replay[l - a];
      }
    }

    for (std::size_t l = b; l-- > a;) {
      const Matrix& x = (l == a) ? seg_input : replay[l - a - 1];
      const Matrix& y = replay[l - a];
      LayerGrads lg = layer_backward(topo.layers[l], net.params[l], x, y, dy);
      grads.slots[l] = std::move(lg.flat);
      dy = std::move(lg.dx);
    }
  }
  return grads;
}

Matrix embed(const LayeredNet& net, const Matrix& input) {
  const NetTopology& topo = net.topo;
  Matrix cur = input;
  for (std::size_t l = 0; l < topo.layers.size(); ++l) {
    cur = layer_forward(topo.layers[l], net.params[l], cur);
  }
  const std::size_t dim = cur.cols;
  Matrix z(cur.rows, dim);
  for (std::size_t i = 0; i < cur.rows; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      ss += cur.at(i, j) * cur.at(i, j);
    }
    double n = std::sqrt(ss + kNormGuard);
    for (std::size_t j = 0; j < dim; ++j) {
      z.at(i, j) = cur.at(i, j) / n;
    }
  }
  return z;
}

}  // namespace shardtrain::engine
