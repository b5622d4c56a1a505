#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "npc/model.hpp"

namespace npc {

/// Supervision for one window. Regression targets are aligned with the
/// trajectory states (values[k] pairs with states[k]); available[k][b] marks
/// which rows carry a target at horizon k (empty means all).
struct WindowTargets {
  std::vector<int> labels;
  std::vector<Tensor> values;
  std::vector<std::vector<bool>> available;

  bool has(std::size_t k, std::size_t b) const { return available.empty() || available[k][b]; }
};

/// Mean squared error over the rows flagged in `rows` (all rows when empty).
/// Returns nullopt when no row is flagged.
inline std::optional<ad::Var> masked_mse(const ad::Var& pred, const Tensor& target, const std::vector<bool>& rows) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse: prediction " + pred.shape().str() + " vs target " + target.shape().str());
  ad::Tape& tape = *pred.tape;
  const std::size_t B = target.shape()[0];
  const std::size_t D = target.size() / B;
  const ad::Var diff = ad::sub(pred, tape.constant(target));
  if (rows.empty()) return ad::mean(ad::square(diff));
  Tensor mask(target.shape());
  std::size_t n = 0;
  for (std::size_t b = 0; b < B; ++b)
    if (rows[b]) {
      ++n;
      for (std::size_t d = 0; d < D; ++d) mask[b * D + d] = 1.0;
    }
  if (n == 0) return std::nullopt;
  return ad::scale(ad::sum(ad::mul(ad::square(diff), tape.constant(std::move(mask)))), 1.0 / static_cast<double>(n * D));
}

/// Cross-entropy of the terminal state's readout.
inline ad::Var classification_cost(const NpcModel& model, const ParamBinding& bind, const HiddenTrajectory& H,
                                   const std::vector<int>& labels) {
  if (H.states.empty()) throw std::invalid_argument("classification_cost: empty trajectory");
  return ad::softmax_cross_entropy(model.continuous().readout(bind, H.terminal()), labels);
}

/// Sum over horizons of the readout MSE, skipping horizons without targets.
inline ad::Var regression_cost(const NpcModel& model, const ParamBinding& bind, const HiddenTrajectory& H,
                               const WindowTargets& targets) {
  if (targets.values.size() < H.states.size())
    throw std::invalid_argument("regression_cost: " + std::to_string(targets.values.size()) + " targets for " +
                                std::to_string(H.states.size()) + " states");
  std::optional<ad::Var> total;
  for (std::size_t k = 0; k < H.states.size(); ++k) {
    const auto term = masked_mse(model.continuous().readout(bind, H.states[k]), targets.values[k],
                                 targets.available.empty() ? std::vector<bool>{} : targets.available[k]);
    if (term) total = total ? ad::add(*total, *term) : *term;
  }
  if (!total) throw std::invalid_argument("regression_cost: no available targets in window");
  return *total;
}

/// Per-action readout loss summed over the first `count` actions.
inline ad::Var action_regularizer(const NpcModel& model, const ParamBinding& bind, const std::vector<ad::Var>& actions,
                                  std::size_t count, const WindowTargets& targets) {
  if (count == 0 || count > actions.size()) throw std::invalid_argument("action_regularizer: bad action count");
  std::optional<ad::Var> total;
  for (std::size_t k = 0; k < count; ++k) {
    const ad::Var out = model.controller().readout(bind, actions[k]);
    std::optional<ad::Var> term;
    if (model.config().task == Task::kClassification) {
      term = ad::softmax_cross_entropy(out, targets.labels);
    } else {
      if (k >= targets.values.size()) throw std::invalid_argument("action_regularizer: missing regression target");
      term = masked_mse(out, targets.values[k], targets.available.empty() ? std::vector<bool>{} : targets.available[k]);
    }
    if (term) total = total ? ad::add(*total, *term) : *term;
  }
  if (!total) throw std::invalid_argument("action_regularizer: no available targets in window");
  return *total;
}

inline ad::Var task_cost(const NpcModel& model, const ParamBinding& bind, const HiddenTrajectory& H,
                         const WindowTargets& targets) {
  return model.config().task == Task::kClassification ? classification_cost(model, bind, H, targets.labels)
                                                      : regression_cost(model, bind, H, targets);
}

/// J(H) + lambda * J^(U) over the horizons actually planned.
inline ad::Var total_objective(const NpcModel& model, const ParamBinding& bind, const HiddenTrajectory& H,
                               const std::vector<ad::Var>& actions, const WindowTargets& targets, double lambda) {
  if (lambda < 0) throw std::invalid_argument("objective lambda must be >= 0");
  const ad::Var J = task_cost(model, bind, H, targets);
  if (lambda == 0) return J;
  return ad::add(J, ad::scale(action_regularizer(model, bind, actions, H.states.size(), targets), lambda));
}

}  // namespace npc
