#pragma once

// Linear-quadratic checks of the receding-horizon convergence results:
// algebraic and differential Riccati solvers, the infinite-horizon optimal
// loop, the periodic-gain MPC loop, and empirical decay-rate measurement.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace npc::theory {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class TheoryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Eigen::Index numeric_rank(const Mat& m) {
  Eigen::ColPivHouseholderQR<Mat> qr(m);
  qr.setThreshold(1e-10);
  return qr.rank();
}

/// dx/dt = A x + B u, y = C x, running cost y'y + u'Ru.
struct StateSpaceModel {
  Mat A, B, C, R;

  StateSpaceModel(Mat a, Mat b, Mat c, Mat r) : A(std::move(a)), B(std::move(b)), C(std::move(c)), R(std::move(r)) {
    validate();
  }

  Eigen::Index states() const { return A.rows(); }
  Eigen::Index inputs() const { return B.cols(); }
  Mat Q() const { return C.transpose() * C; }
  Mat Rinv() const { return R.inverse(); }

  void validate() const {
    const auto n = A.rows();
    if (A.cols() != n || n == 0) throw std::invalid_argument("A must be square and non-empty");
    if (B.rows() != n || B.cols() == 0) throw std::invalid_argument("B must have as many rows as A");
    if (C.cols() != n || C.rows() == 0) throw std::invalid_argument("C must have as many columns as A");
    if (R.rows() != B.cols() || R.cols() != B.cols()) throw std::invalid_argument("R must be m x m");
    if ((R - R.transpose()).norm() > 1e-12 * std::max(1.0, R.norm())) throw std::invalid_argument("R must be symmetric");
    if (Eigen::SelfAdjointEigenSolver<Mat>(R).eigenvalues().minCoeff() <= 0)
      throw std::invalid_argument("R must be positive definite");
    Mat ctrb(n, n * B.cols());
    Mat blk = B;
    for (Eigen::Index k = 0; k < n; ++k) {
      ctrb.middleCols(k * B.cols(), B.cols()) = blk;
      blk = A * blk;
    }
    if (numeric_rank(ctrb) < n) throw std::invalid_argument("(A, B) is not controllable");
    Mat obsv(n * C.rows(), n);
    blk = C;
    for (Eigen::Index k = 0; k < n; ++k) {
      obsv.middleRows(k * C.rows(), C.rows()) = blk;
      blk = blk * A;
    }
    if (numeric_rank(obsv) < n) throw std::invalid_argument("(A, C) is not observable");
  }

  static StateSpaceModel scalar(double a, double b = 1.0, double c = 1.0, double r = 1.0) {
    return {Mat::Constant(1, 1, a), Mat::Constant(1, 1, b), Mat::Constant(1, 1, c), Mat::Constant(1, 1, r)};
  }

  static StateSpaceModel double_integrator() {
    Mat A(2, 2);
    A << 0, 1, 0, 0;
    Mat B(2, 1);
    B << 0, 1;
    return {A, B, Mat::Identity(2, 2), Mat::Identity(1, 1)};
  }
};

/// A'P + PA - P B R^-1 B' P + C'C.
inline Mat riccati_rhs(const StateSpaceModel& m, const Mat& P) {
  return m.A.transpose() * P + P * m.A - P * m.B * m.Rinv() * m.B.transpose() * P + m.Q();
}

inline double are_residual(const StateSpaceModel& m, const Mat& P) { return riccati_rhs(m, P).norm(); }

/// Solves F X + X G = Q through its Kronecker form; meant for small n.
inline Mat solve_sylvester(const Mat& F, const Mat& G, const Mat& Q) {
  const auto n = F.rows(), p = G.rows();
  Mat K = Mat::Zero(n * p, n * p);
  const Mat In = Mat::Identity(n, n), Ip = Mat::Identity(p, p);
  // vec(F X) = (I kron F) vec X, vec(X G) = (G' kron I) vec X.
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index l = 0; l < p; ++l) {
      K.block(j * n, l * n, n, n) += Ip(j, l) * F;
      K.block(j * n, l * n, n, n) += G(l, j) * In;
    }
  const Vec x = K.fullPivLu().solve(Eigen::Map<const Vec>(Q.data(), Q.size()));
  return Eigen::Map<const Mat>(x.data(), n, p);
}

/// Solves A'X + X A = -Q.
inline Mat solve_lyapunov(const Mat& A, const Mat& Q) { return solve_sylvester(A.transpose(), A, -Q); }

inline double max_real_eigenvalue(const Mat& A) { return Eigen::EigenSolver<Mat>(A).eigenvalues().real().maxCoeff(); }

struct AreOptions {
  int max_iterations = 100;
  double tolerance = 1e-13;
};

/// Stabilizing gain from the shifted-Lyapunov (Bass) construction:
/// (A + bI) Z + Z (A + bI)' = 2 B B', K = B' Z^-1.
inline Mat bass_gain(const StateSpaceModel& m) {
  const double min_re = Eigen::EigenSolver<Mat>(m.A).eigenvalues().real().minCoeff();
  const double beta = std::max(0.0, -min_re) + 1.0;
  const Mat Ab = m.A + beta * Mat::Identity(m.states(), m.states());
  const Mat Z = solve_sylvester(Ab, Ab.transpose(), 2.0 * m.B * m.B.transpose());
  return m.B.transpose() * Z.inverse();
}

/// Stabilizing solution of the algebraic Riccati equation by Kleinman-Newton iteration.
inline Mat solve_are(const StateSpaceModel& m, const AreOptions& opt = {}) {
  Mat K = bass_gain(m);
  if (max_real_eigenvalue(m.A - m.B * K) >= 0) throw TheoryError("solve_are: initial gain is not stabilizing");
  const Mat Rinv = m.Rinv();
  Mat P = Mat::Zero(m.states(), m.states());
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Mat Ak = m.A - m.B * K;
    Mat next = solve_lyapunov(Ak, m.Q() + K.transpose() * m.R * K);
    next = 0.5 * (next + next.transpose());
    const double change = (next - P).norm();
    P = next;
    K = Rinv * m.B.transpose() * P;
    if (change <= opt.tolerance * std::max(1.0, P.norm())) break;
  }
  const double res = are_residual(m, P);
  if (!(res < 1e-8)) throw TheoryError("solve_are: no stabilizing solution found (residual " + std::to_string(res) + ")");
  if (max_real_eigenvalue(m.A - m.B * K) >= 0) throw TheoryError("solve_are: solution is not stabilizing");
  return P;
}

inline Mat feedback_gain(const StateSpaceModel& m, const Mat& P) { return m.Rinv() * m.B.transpose() * P; }
inline Mat closed_loop_matrix(const StateSpaceModel& m, const Mat& P) { return m.A - m.B * feedback_gain(m, P); }

/// Decay exponent of the infinite-horizon loop, -max Re eig(A_inf).
inline double mu_infinity(const StateSpaceModel& m, const Mat& P_inf) {
  return -max_real_eigenvalue(closed_loop_matrix(m, P_inf));
}

struct MatrixTrajectory {
  std::vector<double> t;
  std::vector<Mat> P;
};

inline Mat rk4_matrix_step(const StateSpaceModel& m, const Mat& P, double dt) {
  const Mat k1 = riccati_rhs(m, P);
  const Mat k2 = riccati_rhs(m, P + 0.5 * dt * k1);
  const Mat k3 = riccati_rhs(m, P + 0.5 * dt * k2);
  const Mat k4 = riccati_rhs(m, P + dt * k3);
  Mat out = P + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  return 0.5 * (out + out.transpose());
}

/// dP/dt = A'P + PA - P B R^-1 B' P + C'C on [0, T] with `steps` rk4 steps.
/// P0 defaults to C'C.
inline MatrixTrajectory integrate_rde(const StateSpaceModel& m, double T, std::optional<Mat> P0, int steps) {
  if (!(T > 0) || steps < 1) throw std::invalid_argument("integrate_rde: need T > 0 and steps >= 1");
  Mat P = P0 ? *P0 : m.Q();
  if (P.rows() != m.states() || P.cols() != m.states()) throw std::invalid_argument("integrate_rde: P0 has the wrong size");
  if ((P - P.transpose()).norm() > 1e-12 * std::max(1.0, P.norm()))
    throw std::invalid_argument("integrate_rde: P0 must be symmetric");
  if (Eigen::SelfAdjointEigenSolver<Mat>(P).eigenvalues().minCoeff() < -1e-12)
    throw std::invalid_argument("integrate_rde: P0 must be positive semidefinite");
  const double dt = T / steps;
  MatrixTrajectory out;
  out.t.push_back(0.0);
  out.P.push_back(P);
  for (int s = 0; s < steps; ++s) {
    P = rk4_matrix_step(m, P, dt);
    if (!P.allFinite()) throw TheoryError("integrate_rde: blow-up at t = " + std::to_string((s + 1) * dt));
    out.t.push_back((s + 1) * dt);
    out.P.push_back(P);
  }
  return out;
}

struct ClosedLoop {
  std::vector<double> t;
  std::vector<Vec> h;
  std::vector<Vec> u;
};

struct SimOptions {
  double T_sim = 25.0;
  double dt = 0.01;
};

inline int checked_steps(double span, double dt, const char* what) {
  const double r = span / dt;
  const long n = std::lround(r);
  if (n < 1 || std::abs(r - static_cast<double>(n)) > 1e-9 * std::max(1.0, r))
    throw std::invalid_argument(std::string(what) + " must be a positive multiple of the simulation step");
  return static_cast<int>(n);
}

/// dh/dt = A_inf h with u = -R^-1 B' P_inf h.
inline ClosedLoop infinite_horizon_closed_loop(const StateSpaceModel& m, const Mat& P_inf, const Vec& h0,
                                               const SimOptions& sim = {}) {
  const Mat K = feedback_gain(m, P_inf);
  const Mat Acl = m.A - m.B * K;
  const int steps = checked_steps(sim.T_sim, sim.dt, "T_sim");
  ClosedLoop out;
  Vec h = h0;
  for (int n = 0; n <= steps; ++n) {
    out.t.push_back(n * sim.dt);
    out.h.push_back(h);
    out.u.push_back(-K * h);
    if (n == steps) break;
    const Vec k1 = Acl * h;
    const Vec k2 = Acl * (h + 0.5 * sim.dt * k1);
    const Vec k3 = Acl * (h + 0.5 * sim.dt * k2);
    const Vec k4 = Acl * (h + sim.dt * k3);
    h += (sim.dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return out;
}

/// Receding-horizon feedback with the tau-periodic gain R^-1 B' P(T - (t mod tau)).
/// The Riccati solution is stored at half the simulation step on [T - tau, T],
/// so every rk4 stage reads an exact grid value.
class MpcPolicy {
 public:
  MpcPolicy(const StateSpaceModel& m, double T, double tau, double dt, std::optional<Mat> P0 = std::nullopt)
      : tau_(tau), dt_(dt) {
    if (!(tau > 0 && tau < T)) throw std::invalid_argument("mpc: need 0 < tau < T");
    period_steps_ = checked_steps(tau, dt, "tau");
    const int half_steps = 2 * checked_steps(T, dt, "T");
    const auto rde = integrate_rde(m, T, std::move(P0), half_steps);
    const Mat RinvBt = m.Rinv() * m.B.transpose();
    // gains_[j] = gain at phase s = j * dt / 2, i.e. from P(T - s).
    for (int j = 0; j <= 2 * period_steps_; ++j) gains_.push_back(RinvBt * rde.P[static_cast<std::size_t>(half_steps - j)]);
  }

  double tau() const { return tau_; }
  double dt() const { return dt_; }
  int period_steps() const { return period_steps_; }

  /// Gain at half-step phase index j in [0, 2 * period_steps].
  const Mat& gain_at_phase(int j) const { return gains_.at(static_cast<std::size_t>(j)); }

  /// Gain at an arbitrary time (phase rounded to the stored half-step grid, then linearly blended).
  Mat gain(double t) const {
    double s = std::fmod(t, tau_);
    if (s < 0) s += tau_;
    const double x = s / (0.5 * dt_);
    const int j = std::min(static_cast<int>(std::floor(x)), 2 * period_steps_ - 1);
    const double w = x - j;
    return (1.0 - w) * gains_[static_cast<std::size_t>(j)] + w * gains_[static_cast<std::size_t>(j + 1)];
  }

 private:
  double tau_, dt_;
  int period_steps_ = 0;
  std::vector<Mat> gains_;
};

inline ClosedLoop mpc_closed_loop(const StateSpaceModel& m, const Vec& h0, double T, double tau, const SimOptions& sim = {},
                                  std::optional<Mat> P0 = std::nullopt) {
  const MpcPolicy policy(m, T, tau, sim.dt, std::move(P0));
  const int steps = checked_steps(sim.T_sim, sim.dt, "T_sim");
  const int p = policy.period_steps();
  ClosedLoop out;
  Vec h = h0;
  auto rhs = [&](const Vec& x, int phase) -> Vec { return m.A * x - m.B * (policy.gain_at_phase(phase) * x); };
  for (int n = 0; n <= steps; ++n) {
    const int j = 2 * (n % p);
    out.t.push_back(n * sim.dt);
    out.h.push_back(h);
    out.u.push_back(-policy.gain_at_phase(j) * h);
    if (n == steps) break;
    const Vec k1 = rhs(h, j);
    const Vec k2 = rhs(h + 0.5 * sim.dt * k1, j + 1);
    const Vec k3 = rhs(h + 0.5 * sim.dt * k2, j + 1);
    const Vec k4 = rhs(h + sim.dt * k3, j + 2);
    h += (sim.dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return out;
}

struct DecayFit {
  double rate = std::numeric_limits<double>::quiet_NaN();  // fitted exponent; positive means decay
  std::size_t points = 0;
  bool valid() const { return points >= 3 && std::isfinite(rate); }
};

/// Least-squares slope of log(value) against t over samples whose value lies in
/// [lo, hi] * reference; returns the negated slope.
inline DecayFit fit_decay(const std::vector<double>& t, const std::vector<double>& value, double reference,
                          double lo = 1e-8, double hi = 1e-1) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(value[i] >= lo * reference && value[i] <= hi * reference)) continue;
    const double y = std::log(value[i]);
    sx += t[i];
    sy += y;
    sxx += t[i] * t[i];
    sxy += t[i] * y;
    ++n;
  }
  DecayFit f;
  f.points = n;
  const double denom = static_cast<double>(n) * sxx - sx * sx;
  if (n >= 3 && denom > 0) f.rate = -(static_cast<double>(n) * sxy - sx * sy) / denom;
  return f;
}

inline std::vector<double> norms(const std::vector<Vec>& xs) {
  std::vector<double> out;
  for (const auto& x : xs) out.push_back(x.norm());
  return out;
}

inline DecayFit fit_state_decay(const ClosedLoop& loop) {
  const auto n = norms(loop.h);
  return fit_decay(loop.t, n, n.front());
}

/// Decay rate of ||P(t) - P_inf||_F along an RDE trajectory.
inline DecayFit fit_rde_decay(const MatrixTrajectory& rde, const Mat& P_inf) {
  std::vector<double> gap;
  for (const auto& P : rde.P) gap.push_back((P - P_inf).norm());
  return fit_decay(rde.t, gap, gap.front());
}

struct Theorem1Row {
  double T = 0, tau = 0;
  DecayFit fit;
};

struct Theorem1Report {
  Mat P_inf;
  double mu_inf = 0;
  DecayFit infinite_fit;
  DecayFit rde_fit;  // compare with 2 mu_inf
  std::vector<Theorem1Row> rows;
};

struct TheoryOptions {
  SimOptions sim;
  std::optional<Mat> P0;
  double rde_horizon = 20.0;
  int rde_steps = 4000;
};

inline Theorem1Report verify_theorem1(const StateSpaceModel& m, const Vec& h0,
                                      const std::vector<std::pair<double, double>>& grid, const TheoryOptions& opt = {}) {
  Theorem1Report rep;
  rep.P_inf = solve_are(m);
  rep.mu_inf = mu_infinity(m, rep.P_inf);
  rep.infinite_fit = fit_state_decay(infinite_horizon_closed_loop(m, rep.P_inf, h0, opt.sim));
  rep.rde_fit = fit_rde_decay(integrate_rde(m, opt.rde_horizon, opt.P0, opt.rde_steps), rep.P_inf);
  for (const auto& [T, tau] : grid)
    rep.rows.push_back({T, tau, fit_state_decay(mpc_closed_loop(m, h0, T, tau, opt.sim, opt.P0))});
  return rep;
}

struct Theorem2Row {
  double T = 0;
  double state_gap = 0, control_gap = 0;
  double total() const { return state_gap + control_gap; }
};

struct Theorem2Report {
  double tau = 0;
  std::vector<Theorem2Row> rows;
  double slope = std::numeric_limits<double>::quiet_NaN();  // d log(total) / dT
  bool non_increasing = false;
};

/// Sup-norm gaps between the MPC and infinite-horizon loops per lookahead T.
inline Theorem2Report verify_theorem2(const StateSpaceModel& m, const Vec& h0, double tau, const std::vector<double>& T_grid,
                                      const TheoryOptions& opt = {}, double slack = 1e-6) {
  Theorem2Report rep;
  rep.tau = tau;
  const Mat P_inf = solve_are(m);
  const ClosedLoop ref = infinite_horizon_closed_loop(m, P_inf, h0, opt.sim);
  for (double T : T_grid) {
    const ClosedLoop mpc = mpc_closed_loop(m, h0, T, tau, opt.sim, opt.P0);
    Theorem2Row row;
    row.T = T;
    for (std::size_t i = 0; i < ref.t.size(); ++i) {
      row.state_gap = std::max(row.state_gap, (mpc.h[i] - ref.h[i]).norm());
      row.control_gap = std::max(row.control_gap, (mpc.u[i] - ref.u[i]).norm());
    }
    rep.rows.push_back(row);
  }
  rep.non_increasing = true;
  for (std::size_t i = 1; i < rep.rows.size(); ++i)
    rep.non_increasing = rep.non_increasing && rep.rows[i].total() <= rep.rows[i - 1].total() + slack;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (const auto& r : rep.rows) {
    if (!(r.total() > 0)) continue;
    const double y = std::log(r.total());
    sx += r.T;
    sy += y;
    sxx += r.T * r.T;
    sxy += r.T * y;
    ++n;
  }
  const double denom = static_cast<double>(n) * sxx - sx * sx;
  if (n >= 2 && denom > 0) rep.slope = (static_cast<double>(n) * sxy - sx * sy) / denom;
  return rep;
}

}  // namespace npc::theory
