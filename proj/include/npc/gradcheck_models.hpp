#pragma once

// Finite-difference cases for the composed model: controller, both backends
// and the training costs, differentiated with respect to every parameter.

#include <memory>
#include <random>
#include <vector>

#include "npc/gradcheck.hpp"
#include "npc/objective.hpp"

namespace npc {

namespace detail {

inline ModelConfig tiny_config(Task task, Backend backend, std::uint64_t seed) {
  ModelConfig c;
  c.task = task;
  c.backend = backend;
  c.input_dim = 2;
  c.classes = 3;
  c.controller_hidden = 3;
  c.head_hidden = 4;
  c.action_dim = 2;
  c.hidden = 3;
  c.fdepth = 1;
  c.fwidth = 4;
  c.horizon = 2;
  c.window = 2;
  c.solver = {SolverMethod::kRk4, 2};
  c.seed = seed;
  return c;
}

inline std::vector<Tensor> param_values(const ParamStore& store) {
  std::vector<Tensor> v;
  for (const auto& e : store.entries()) v.push_back(e.value);
  return v;
}

inline ParamBinding bind_leading(const ParamStore& store, const std::vector<ad::Var>& vars) {
  return ParamBinding(store, std::vector<ad::Var>(vars.begin(), vars.begin() + static_cast<long>(store.size())));
}

// Shared window: two rows with different irregular times.
inline const RowTimes& window_times() {
  static const RowTimes t = {{0.0, 0.4, 1.1}, {0.2, 0.5, 0.7}};
  return t;
}

}  // namespace detail

/// Each case's inputs are the model parameters, in store order, optionally
/// followed by the actions driving the backend.
inline std::vector<GradCheckCase> model_grad_cases(std::uint64_t seed = 3) {
  using V = std::vector<ad::Var>;
  std::vector<GradCheckCase> cases;
  std::mt19937_64 rng(seed);
  const Tensor x0 = random_tensor({2, 2}, rng);
  const Tensor x1 = random_tensor({2, 2}, rng);
  const Tensor dt = Tensor({2, 1}, {0.3, 0.7});

  {
    auto model = std::make_shared<NpcModel>(detail::tiny_config(Task::kClassification, Backend::kOdeRnn, seed));
    cases.push_back({"controller", [model, x0, x1, dt](ad::Tape& t, const V& v) {
                       const auto bind = detail::bind_leading(model->params(), v);
                       const auto& c = model->controller();
                       ad::Var z = c.zero_state(t, 2);
                       z = c.step(bind, z, t.constant(x0), t.constant(dt));
                       z = c.step(bind, z, t.constant(x1), t.constant(dt));
                       ad::Var acc = project(t, z, 31);
                       for (const auto& u : c.emit(bind, z)) acc = ad::add(acc, project(t, c.readout(bind, u), 32));
                       return acc;
                     },
                     detail::param_values(model->params())});
  }

  for (Backend backend : {Backend::kOdeRnn, Backend::kCde}) {
    auto model = std::make_shared<NpcModel>(detail::tiny_config(Task::kRegression, backend, seed));
    std::vector<Tensor> inputs = detail::param_values(model->params());
    for (int k = 0; k < 3; ++k) inputs.push_back(random_tensor({2, 2}, rng));
    const std::size_t np = model->params().size();
    cases.push_back({std::string("evolve_") + to_string(backend), [model, x0, np](ad::Tape& t, const V& v) {
                       const auto bind = detail::bind_leading(model->params(), v);
                       const auto& m = model->continuous();
                       const V actions(v.begin() + static_cast<long>(np), v.end());
                       const auto H = m.evolve(bind, m.encode(bind, t.constant(x0)), actions, detail::window_times());
                       ad::Var acc = project(t, H.states[0], 40);
                       for (std::size_t k = 1; k < H.states.size(); ++k)
                         acc = ad::add(acc, project(t, m.readout(bind, H.states[k]), 40 + k));
                       return acc;
                     },
                     inputs});
  }

  {
    auto model = std::make_shared<NpcModel>(detail::tiny_config(Task::kClassification, Backend::kOdeRnn, seed));
    cases.push_back({"classification_objective", [model, x0, x1, dt](ad::Tape& t, const V& v) {
                       const auto bind = detail::bind_leading(model->params(), v);
                       ad::Var z = model->controller().zero_state(t, 2);
                       z = model->controller().step(bind, z, t.constant(x0), t.constant(dt));
                       const auto U = model->controller().emit(bind, z);
                       const auto& m = model->continuous();
                       const auto H = m.evolve(bind, m.encode(bind, t.constant(x1)), U, detail::window_times());
                       WindowTargets tg;
                       tg.labels = {2, 0};
                       return total_objective(*model, bind, H, U, tg, 0.3);
                     },
                     detail::param_values(model->params())});
  }

  for (Backend backend : {Backend::kOdeRnn, Backend::kCde}) {
    auto model = std::make_shared<NpcModel>(detail::tiny_config(Task::kRegression, backend, seed));
    WindowTargets tg;
    for (int k = 0; k < 3; ++k) tg.values.push_back(random_tensor({2, 2}, rng));
    tg.available = {{true, true}, {true, false}, {false, true}};
    cases.push_back({std::string("regression_objective_") + to_string(backend),
                     [model, x0, dt, tg](ad::Tape& t, const V& v) {
                       const auto bind = detail::bind_leading(model->params(), v);
                       ad::Var z = model->controller().zero_state(t, 2);
                       z = model->controller().step(bind, z, t.constant(x0), t.constant(dt));
                       const auto U = model->controller().emit(bind, z);
                       const auto& m = model->continuous();
                       const ad::Var h0 = m.arrive(bind, m.encode(bind, t.constant(x0)), U[0]);
                       const auto H = m.evolve(bind, h0, U, detail::window_times());
                       return total_objective(*model, bind, H, U, tg, 0.3);
                     },
                     detail::param_values(model->params())});
  }
  return cases;
}

}  // namespace npc
