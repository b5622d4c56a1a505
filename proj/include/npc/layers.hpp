#pragma once

#include <random>
#include <string>
#include <vector>

#include "npc/autodiff.hpp"
#include "npc/param_store.hpp"

namespace npc {

/// Affine layer x W + b with W stored as [in, out].
struct LinearParams {
  std::size_t w = 0, b = 0;
  std::size_t in = 0, out = 0;
};

inline LinearParams add_linear(ParamStore& store, const std::string& prefix, Partition part, std::size_t in,
                               std::size_t out, std::mt19937_64& rng) {
  LinearParams p;
  p.in = in;
  p.out = out;
  p.w = store.add_uniform(prefix + ".w", part, Shape{in, out}, in, rng);
  p.b = store.add_uniform(prefix + ".b", part, Shape{out}, in, rng);
  return p;
}

inline ad::Var linear(const ParamBinding& bind, const LinearParams& p, const ad::Var& x) {
  if (x.shape().back() != p.in)
    throw ShapeError("linear: input width " + std::to_string(x.shape().back()) + " but layer expects " +
                     std::to_string(p.in));
  return ad::add(ad::matmul(x, bind[p.w]), bind[p.b]);
}

enum class Activation { kTanh, kRelu, kSigmoid, kNone };

inline ad::Var activate(const ad::Var& x, Activation a) {
  switch (a) {
    case Activation::kTanh: return ad::tanh(x);
    case Activation::kRelu: return ad::relu(x);
    case Activation::kSigmoid: return ad::sigmoid(x);
    case Activation::kNone: return x;
  }
  return x;
}

/// Stack of linear layers; `hidden` activation between layers, `output` after the last.
struct MlpParams {
  std::vector<LinearParams> layers;
  Activation hidden = Activation::kTanh;
  Activation output = Activation::kNone;
};

inline MlpParams add_mlp(ParamStore& store, const std::string& prefix, Partition part, std::size_t in,
                         const std::vector<std::size_t>& hidden_widths, std::size_t out, std::mt19937_64& rng,
                         Activation hidden = Activation::kTanh, Activation output = Activation::kNone) {
  MlpParams m;
  m.hidden = hidden;
  m.output = output;
  std::size_t prev = in;
  for (std::size_t i = 0; i < hidden_widths.size(); ++i) {
    m.layers.push_back(add_linear(store, prefix + ".l" + std::to_string(i), part, prev, hidden_widths[i], rng));
    prev = hidden_widths[i];
  }
  m.layers.push_back(add_linear(store, prefix + ".out", part, prev, out, rng));
  return m;
}

inline ad::Var mlp(const ParamBinding& bind, const MlpParams& m, ad::Var x) {
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    x = linear(bind, m.layers[i], x);
    x = activate(x, i + 1 < m.layers.size() ? m.hidden : m.output);
  }
  return x;
}

/// GRU cell weights with gates fused along the output axis in (reset, update, candidate) order.
struct GruParams {
  std::size_t wx = 0, wh = 0, bx = 0, bh = 0;
  std::size_t in = 0, hidden = 0;
};

inline GruParams add_gru(ParamStore& store, const std::string& prefix, Partition part, std::size_t in,
                         std::size_t hidden, std::mt19937_64& rng) {
  GruParams g;
  g.in = in;
  g.hidden = hidden;
  g.wx = store.add_uniform(prefix + ".wx", part, Shape{in, 3 * hidden}, hidden, rng);
  g.wh = store.add_uniform(prefix + ".wh", part, Shape{hidden, 3 * hidden}, hidden, rng);
  g.bx = store.add_uniform(prefix + ".bx", part, Shape{3 * hidden}, hidden, rng);
  g.bh = store.add_uniform(prefix + ".bh", part, Shape{3 * hidden}, hidden, rng);
  return g;
}

/// h' = (1 - z) * n + z * h with
/// r = sigmoid(x Wxr + bxr + h Whr + bhr), z = sigmoid(x Wxz + bxz + h Whz + bhz),
/// n = tanh(x Wxn + bxn + r * (h Whn + bhn)).
inline ad::Var gru_cell(const ParamBinding& bind, const GruParams& g, const ad::Var& h, const ad::Var& x) {
  if (x.shape().back() != g.in)
    throw ShapeError("gru_cell: input width " + std::to_string(x.shape().back()) + " but cell expects " +
                     std::to_string(g.in));
  if (h.shape().back() != g.hidden)
    throw ShapeError("gru_cell: state width " + std::to_string(h.shape().back()) + " but cell expects " +
                     std::to_string(g.hidden));
  const std::size_t H = g.hidden;
  const std::size_t axis = x.shape().rank() - 1;
  const ad::Var gi = ad::add(ad::matmul(x, bind[g.wx]), bind[g.bx]);
  const ad::Var gh = ad::add(ad::matmul(h, bind[g.wh]), bind[g.bh]);
  const ad::Var r = ad::sigmoid(ad::add(ad::slice(gi, axis, 0, H), ad::slice(gh, axis, 0, H)));
  const ad::Var z = ad::sigmoid(ad::add(ad::slice(gi, axis, H, H), ad::slice(gh, axis, H, H)));
  const ad::Var n = ad::tanh(ad::add(ad::slice(gi, axis, 2 * H, H), ad::mul(r, ad::slice(gh, axis, 2 * H, H))));
  return ad::add(n, ad::mul(z, ad::sub(h, n)));
}

}  // namespace npc
