#pragma once

// Discrete-time controller: a GRU over (x_i, dt_i), an MLP head emitting the
// M+1 planned actions, and a linear action readout used by the regularizer.

#include <random>
#include <string>
#include <vector>

#include "npc/layers.hpp"

namespace npc {

struct ControllerConfig {
  std::size_t input_dim = 1;
  std::size_t hidden = 16;
  std::size_t head_hidden = 16;
  std::size_t action_dim = 4;
  std::size_t horizon = 5;
  std::size_t readout_width = 2;
};

class Controller {
 public:
  Controller() = default;

  static Controller create(ParamStore& store, const ControllerConfig& cfg, std::mt19937_64& rng) {
    if (cfg.horizon < 1) throw std::invalid_argument("controller horizon must be >= 1");
    Controller c;
    c.cfg_ = cfg;
    const auto part = Partition::kController;
    c.cell_ = add_gru(store, "ctrl.gru", part, cfg.input_dim + 1, cfg.hidden, rng);
    c.head_ = add_mlp(store, "ctrl.head", part, cfg.hidden, {cfg.head_hidden}, (cfg.horizon + 1) * cfg.action_dim, rng);
    c.readout_ = add_linear(store, "ctrl.readout", part, cfg.action_dim, cfg.readout_width, rng);
    return c;
  }

  const ControllerConfig& config() const { return cfg_; }

  ad::Var zero_state(ad::Tape& tape, std::size_t rows) const { return tape.constant(Tensor({rows, cfg_.hidden})); }

  /// z_i = GRU(z_{i-1}, concat(x_i, dt_i)); x is [B, D], dt is [B, 1].
  ad::Var step(const ParamBinding& bind, const ad::Var& z, const ad::Var& x, const ad::Var& dt) const {
    if (x.shape().back() != cfg_.input_dim)
      throw ShapeError("controller: observation width " + std::to_string(x.shape().back()) + " but expected " +
                       std::to_string(cfg_.input_dim));
    return gru_cell(bind, cell_, z, ad::concat({x, dt}, x.shape().rank() - 1));
  }

  /// The M+1 planned actions [u_i, ..., u_{i+M}], each [B, Du].
  std::vector<ad::Var> emit(const ParamBinding& bind, const ad::Var& z) const {
    const ad::Var flat = mlp(bind, head_, z);
    const std::size_t axis = flat.shape().rank() - 1;
    std::vector<ad::Var> u;
    for (std::size_t k = 0; k <= cfg_.horizon; ++k) u.push_back(ad::slice(flat, axis, k * cfg_.action_dim, cfg_.action_dim));
    return u;
  }

  ad::Var readout(const ParamBinding& bind, const ad::Var& u) const { return linear(bind, readout_, u); }

 private:
  ControllerConfig cfg_;
  GruParams cell_;
  MlpParams head_;
  LinearParams readout_;
};

}  // namespace npc
