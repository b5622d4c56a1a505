#pragma once

// Continuous-time backends. Each interval [t_k, t_{k+1}] is integrated in a
// unit reparameterization s in [0, 1] with dh/ds = (t_{k+1} - t_k) dh/dt, so
// batch rows with different observation times share one solver loop.

#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "npc/control_path.hpp"
#include "npc/layers.hpp"
#include "npc/ode_solver.hpp"

namespace npc {

/// Per-row knot times, [rows][knots].
using RowTimes = std::vector<std::vector<double>>;

/// states[0] is the start state h(t_i); states[k] is h(t_{i+k}).
struct HiddenTrajectory {
  RowTimes times;
  std::vector<ad::Var> states;

  const ad::Var& terminal() const { return states.back(); }
  std::size_t horizons() const { return states.size() - 1; }
};

inline void validate_row_times(const RowTimes& times, std::size_t knots, std::size_t rows) {
  if (times.size() != rows)
    throw std::invalid_argument("row times: " + std::to_string(times.size()) + " rows for a batch of " + std::to_string(rows));
  for (const auto& r : times) {
    if (r.size() != knots)
      throw std::invalid_argument("row times: expected " + std::to_string(knots) + " knots, got " + std::to_string(r.size()));
    for (std::size_t k = 1; k < r.size(); ++k)
      if (!(r[k] > r[k - 1])) throw std::invalid_argument("row times must be strictly increasing");
  }
}

inline ad::Var column(ad::Tape& tape, const std::vector<double>& per_row) {
  return tape.constant(Tensor({per_row.size(), 1}, per_row));
}

/// Multiplies row b of x by c[b].
inline ad::Var scale_rows(const ad::Var& x, const std::vector<double>& c) {
  bool uniform = true;
  for (double v : c) uniform = uniform && v == c.front();
  if (uniform) return ad::scale(x, c.front());
  const Shape s = x.shape();
  Tensor w(s);
  const std::size_t width = s.numel() / s[0];
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t j = 0; j < width; ++j) w[b * width + j] = c[b];
  return ad::mul(x, x.tape->constant(std::move(w)));
}

namespace detail {
inline std::vector<double> interval_lengths(const RowTimes& t, std::size_t k) {
  std::vector<double> d(t.size());
  for (std::size_t b = 0; b < t.size(); ++b) d[b] = t[b][k + 1] - t[b][k];
  return d;
}
inline std::vector<double> times_at(const RowTimes& t, std::size_t k, double s) {
  std::vector<double> out(t.size());
  for (std::size_t b = 0; b < t.size(); ++b) out[b] = t[b][k] + s * (t[b][k + 1] - t[b][k]);
  return out;
}
}  // namespace detail

/// f(h, u, t) with h [B, H], u [B, Du], t [B, 1].
using OdeField = std::function<ad::Var(const ad::Var&, const ad::Var&, const ad::Var&)>;
/// Cell update applied at each interval end with the next action; empty disables jumps.
using JumpFn = std::function<ad::Var(const ad::Var&, const ad::Var&)>;
/// f'(h, t) returning the flattened [B, H * (Du + 1)] matrix.
using CdeField = std::function<ad::Var(const ad::Var&, const ad::Var&)>;

/// ODE-RNN over K intervals: actions[k] drives [t_k, t_{k+1}], then
/// h(t_{k+1}) = jump(h~(t_{k+1}), actions[k+1]). Needs K+1 actions and K+1 knots per row.
inline HiddenTrajectory evolve_ode_rnn(const OdeField& field, const JumpFn& jump, const ad::Var& h0,
                                       const std::vector<ad::Var>& actions, const RowTimes& times,
                                       const SolverOptions& solver) {
  if (times.empty() || times.front().size() < 2) throw std::invalid_argument("evolve_ode_rnn: need at least one interval");
  const std::size_t K = times.front().size() - 1;
  validate_row_times(times, K + 1, h0.shape()[0]);
  if (actions.size() < K + (jump ? 1 : 0))
    throw std::invalid_argument("evolve_ode_rnn: " + std::to_string(actions.size()) + " actions for " + std::to_string(K) +
                                " intervals");
  ad::Tape& tape = *h0.tape;
  HiddenTrajectory out;
  out.times = times;
  out.states.push_back(h0);
  ad::Var h = h0;
  for (std::size_t k = 0; k < K; ++k) {
    const auto dt = detail::interval_lengths(times, k);
    const ad::Var& u = actions[k];
    auto rhs = [&](const ad::Var& state, double s) {
      return scale_rows(field(state, u, column(tape, detail::times_at(times, k, s))), dt);
    };
    h = integrate_interval(rhs, h, 0.0, 1.0, solver.substeps, solver.method);
    if (jump) h = jump(h, actions[k + 1]);
    out.states.push_back(h);
  }
  return out;
}

/// Neural CDE driven by the natural cubic spline through (actions[k], t_k) with
/// an appended time channel; h is sampled at every knot after the first.
inline HiddenTrajectory evolve_cde(const CdeField& field, const ad::Var& h0, const std::vector<ad::Var>& actions,
                                   const RowTimes& times, const SolverOptions& solver) {
  if (times.empty() || times.front().size() < 2) throw std::invalid_argument("evolve_cde: spline needs at least 2 knots");
  const std::size_t knots = times.front().size();
  const std::size_t rows = h0.shape()[0];
  const std::size_t H = h0.shape()[1];
  validate_row_times(times, knots, rows);
  if (actions.size() < knots)
    throw std::invalid_argument("evolve_cde: " + std::to_string(actions.size()) + " actions for " + std::to_string(knots) +
                                " knots");
  const std::vector<ad::Var> used(actions.begin(), actions.begin() + static_cast<std::ptrdiff_t>(knots));
  std::vector<SplineBasis> bases;
  bases.reserve(rows);
  for (const auto& r : times) bases.emplace_back(r);
  ad::Tape& tape = *h0.tape;
  HiddenTrajectory out;
  out.times = times;
  out.states.push_back(h0);
  ad::Var h = h0;
  for (std::size_t k = 0; k + 1 < knots; ++k) {
    const auto dt = detail::interval_lengths(times, k);
    auto rhs = [&](const ad::Var& state, double s) {
      const auto t = detail::times_at(times, k, s);
      // dU/ds on segment k: spline-derivative weights scaled by the interval length.
      std::vector<std::vector<double>> w(knots, std::vector<double>(rows));
      for (std::size_t b = 0; b < rows; ++b) {
        const auto wb = bases[b].weights_on_segment(k, t[b], 1);
        for (std::size_t j = 0; j < knots; ++j) w[j][b] = wb[j] * dt[b];
      }
      const ad::Var du = ad::concat({ad::weighted_sum(used, w), column(tape, dt)}, 1);
      const ad::Var m = field(state, column(tape, t));
      return ad::batched_matvec(m, du, H);
    };
    h = integrate_interval(rhs, h, 0.0, 1.0, solver.substeps, solver.method);
    out.states.push_back(h);
  }
  return out;
}

enum class Backend { kOdeRnn, kCde };

inline Backend backend_from_string(const std::string& s) {
  if (s == "ode_rnn") return Backend::kOdeRnn;
  if (s == "cde") return Backend::kCde;
  throw std::invalid_argument("unknown backend '" + s + "' (expected ode_rnn or cde)");
}
inline const char* to_string(Backend b) { return b == Backend::kOdeRnn ? "ode_rnn" : "cde"; }

struct ContinuousConfig {
  Backend backend = Backend::kOdeRnn;
  std::size_t input_dim = 1;
  std::size_t hidden = 16;
  std::size_t fdepth = 2;
  std::size_t fwidth = 0;  // 0 means 2 * hidden
  std::size_t action_dim = 4;
  std::size_t readout_width = 2;
  bool jumps = true;
  SolverOptions solver{SolverMethod::kRk4, 2};
};

/// Encoder, vector field(s), jump cell and state readout of one backend.
class ContinuousModel {
 public:
  ContinuousModel() = default;

  static ContinuousModel create(ParamStore& store, const ContinuousConfig& cfg, std::mt19937_64& rng) {
    ContinuousModel m;
    m.cfg_ = cfg;
    const auto part = Partition::kContinuous;
    const std::size_t H = cfg.hidden;
    const std::vector<std::size_t> widths(cfg.fdepth, cfg.fwidth ? cfg.fwidth : 2 * H);
    m.enc_ = add_linear(store, "enc", part, cfg.input_dim, H, rng);
    if (cfg.backend == Backend::kOdeRnn) {
      m.field_ = add_mlp(store, "field", part, H + cfg.action_dim + 1, widths, H, rng);
      m.jump_ = add_gru(store, "jump", part, cfg.action_dim, H, rng);
    } else {
      m.field_ = add_mlp(store, "cde", part, H + 1, widths, H * (cfg.action_dim + 1), rng, Activation::kTanh,
                         Activation::kTanh);
    }
    m.readout_ = add_linear(store, "readout", part, H, cfg.readout_width, rng);
    return m;
  }

  const ContinuousConfig& config() const { return cfg_; }

  ad::Var encode(const ParamBinding& bind, const ad::Var& x) const { return ad::tanh(linear(bind, enc_, x)); }
  ad::Var readout(const ParamBinding& bind, const ad::Var& h) const { return linear(bind, readout_, h); }

  OdeField ode_field(const ParamBinding& bind) const {
    return [this, &bind](const ad::Var& h, const ad::Var& u, const ad::Var& t) {
      return mlp(bind, field_, ad::concat({h, u, t}, 1));
    };
  }
  JumpFn jump(const ParamBinding& bind) const {
    if (!cfg_.jumps) return {};
    return [this, &bind](const ad::Var& h, const ad::Var& u) { return gru_cell(bind, jump_, h, u); };
  }
  CdeField cde_field(const ParamBinding& bind) const {
    return [this, &bind](const ad::Var& h, const ad::Var& t) { return mlp(bind, field_, ad::concat({h, t}, 1)); };
  }

  /// Planned trajectory over times[b].size() - 1 horizons.
  HiddenTrajectory evolve(const ParamBinding& bind, const ad::Var& h, const std::vector<ad::Var>& actions,
                          const RowTimes& times) const {
    if (cfg_.backend == Backend::kOdeRnn) return evolve_ode_rnn(ode_field(bind), jump(bind), h, actions, times, cfg_.solver);
    return evolve_cde(cde_field(bind), h, actions, times, cfg_.solver);
  }

  /// Executes one interval from h(t_i): the ODE-RNN flows with u0, the CDE follows
  /// the linear path u0 -> u1. Returns the state at t_{i+1} before any jump.
  ad::Var leg(const ParamBinding& bind, const ad::Var& h, const ad::Var& u0, const ad::Var& u1,
              const RowTimes& times) const {
    if (cfg_.backend == Backend::kOdeRnn) return evolve_ode_rnn(ode_field(bind), {}, h, {u0}, times, cfg_.solver).terminal();
    return evolve_cde(cde_field(bind), h, {u0, u1}, times, cfg_.solver).terminal();
  }

  /// Jump applied on arrival at an observation with that observation's first action.
  ad::Var arrive(const ParamBinding& bind, const ad::Var& h, const ad::Var& u) const {
    if (cfg_.backend != Backend::kOdeRnn || !cfg_.jumps) return h;
    return gru_cell(bind, jump_, h, u);
  }

  /// State at query times strictly inside the committed interval [t0, t1], before any jump.
  ad::Var flow_partial(const ParamBinding& bind, const ad::Var& h, const ad::Var& u0, const ad::Var& u1, double t0,
                       double t1, double q) const {
    if (q == t0) return h;
    if (cfg_.backend == Backend::kOdeRnn)
      return evolve_ode_rnn(ode_field(bind), {}, h, {u0}, {{t0, q}}, cfg_.solver).terminal();
    // The committed CDE path is linear, so its restriction to [t0, q] is the
    // linear path from u0 to the interpolated action at q.
    const double frac = (q - t0) / (t1 - t0);
    const ad::Var uq = ad::add(u0, ad::scale(ad::sub(u1, u0), frac));
    return evolve_cde(cde_field(bind), h, {u0, uq}, {{t0, q}}, cfg_.solver).terminal();
  }

 private:
  ContinuousConfig cfg_;
  LinearParams enc_;
  MlpParams field_;
  GruParams jump_;
  LinearParams readout_;
};

}  // namespace npc
