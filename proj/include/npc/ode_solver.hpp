#pragma once

// Fixed-step explicit solvers, generic over the state type. A State needs
// `State + State` and `double * State`; autodiff Vars, Eigen vectors and
// matrices, and plain doubles all qualify. With Vars every stage lands on the
// tape, so gradients are those of the discrete scheme.

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "npc/autodiff.hpp"

namespace npc {

enum class SolverMethod { kEuler, kRk4 };

inline SolverMethod solver_method_from_string(const std::string& s) {
  if (s == "euler") return SolverMethod::kEuler;
  if (s == "rk4") return SolverMethod::kRk4;
  throw std::invalid_argument("unknown solver method '" + s + "' (expected euler or rk4)");
}
inline const char* to_string(SolverMethod m) { return m == SolverMethod::kEuler ? "euler" : "rk4"; }

struct SolverOptions {
  SolverMethod method = SolverMethod::kRk4;
  int substeps = 10;
};

/// Thrown when a state stops being finite; carries the time of the failed step.
class SolverBlowUp : public std::runtime_error {
 public:
  explicit SolverBlowUp(double t)
      : std::runtime_error(message(t)), time_(t) {}
  double time() const { return time_; }

 private:
  static std::string message(double t) {
    std::ostringstream os;
    os << "ODE solver: non-finite state at t = " << t;
    return os.str();
  }
  double time_;
};

/// Evaluation times plus the number of uniform substeps between consecutive ones.
struct TimeGrid {
  std::vector<double> eval_times;
  int substeps_per_interval = 10;

  void validate() const {
    if (eval_times.empty()) throw std::invalid_argument("TimeGrid: no evaluation times");
    if (substeps_per_interval < 1) throw std::invalid_argument("TimeGrid: substeps_per_interval must be >= 1");
    for (std::size_t i = 1; i < eval_times.size(); ++i)
      if (!(eval_times[i] > eval_times[i - 1]))
        throw std::invalid_argument("TimeGrid: evaluation times must be strictly increasing");
  }
};

template <class State>
struct Trajectory {
  std::vector<double> times;
  std::vector<State> states;
};

template <class S>
bool state_is_finite(const S& s) {
  if constexpr (std::is_arithmetic_v<S>) {
    return std::isfinite(s);
  } else if constexpr (requires { s.allFinite(); }) {
    return s.allFinite();
  } else {
    return is_finite(s);
  }
}

template <class State, class F>
State euler_step(F&& f, const State& h, double t, double dt) {
  const State k1 = f(h, t);
  return h + dt * k1;
}

template <class State, class F>
State rk4_step(F&& f, const State& h, double t, double dt) {
  const double half = 0.5 * dt;
  const State k1 = f(h, t);
  const State h2 = h + half * k1;
  const State k2 = f(h2, t + half);
  const State h3 = h + half * k2;
  const State k3 = f(h3, t + half);
  const State h4 = h + dt * k3;
  const State k4 = f(h4, t + dt);
  const State incr = k1 + 2.0 * k2 + 2.0 * k3 + k4;
  return h + (dt / 6.0) * incr;
}

/// Integrates from t0 to t1 in `substeps` uniform steps.
template <class State, class F>
State integrate_interval(F&& f, State h, double t0, double t1, int substeps, SolverMethod method) {
  if (substeps < 1) throw std::invalid_argument("integrate_interval: substeps must be >= 1");
  const double dt = (t1 - t0) / substeps;
  for (int s = 0; s < substeps; ++s) {
    const double t = t0 + s * dt;
    h = method == SolverMethod::kEuler ? euler_step(f, h, t, dt) : rk4_step(f, h, t, dt);
    if (!state_is_finite(h)) throw SolverBlowUp(t + dt);
  }
  return h;
}

/// Solves dh/dt = f(h, t) with h(eval_times[0]) = h0; returns h at every evaluation time.
template <class State, class F>
Trajectory<State> ode_solve(F&& f, const State& h0, const TimeGrid& grid, SolverMethod method) {
  grid.validate();
  if (!state_is_finite(h0)) throw SolverBlowUp(grid.eval_times.front());
  Trajectory<State> out;
  out.times = grid.eval_times;
  out.states.reserve(grid.eval_times.size());
  out.states.push_back(h0);
  State h = h0;
  for (std::size_t i = 1; i < grid.eval_times.size(); ++i) {
    h = integrate_interval(f, h, grid.eval_times[i - 1], grid.eval_times[i], grid.substeps_per_interval, method);
    out.states.push_back(h);
  }
  return out;
}

/// Solves dh/dt = f(h, a_k, t) where a_k is held fixed on [eval_times[k], eval_times[k+1]].
template <class State, class Action, class F>
Trajectory<State> ode_solve_controlled(F&& f, const State& h0, const std::vector<Action>& actions,
                                       const TimeGrid& grid, SolverMethod method) {
  grid.validate();
  if (actions.size() + 1 != grid.eval_times.size())
    throw std::invalid_argument("ode_solve_controlled: " + std::to_string(actions.size()) + " actions for " +
                                std::to_string(grid.eval_times.size() - 1) + " intervals");
  if (!state_is_finite(h0)) throw SolverBlowUp(grid.eval_times.front());
  Trajectory<State> out;
  out.times = grid.eval_times;
  out.states.push_back(h0);
  State h = h0;
  for (std::size_t k = 0; k + 1 < grid.eval_times.size(); ++k) {
    const Action& a = actions[k];
    auto fk = [&](const State& s, double t) { return f(s, a, t); };
    h = integrate_interval(fk, h, grid.eval_times[k], grid.eval_times[k + 1], grid.substeps_per_interval, method);
    out.states.push_back(h);
  }
  return out;
}

}  // namespace npc
