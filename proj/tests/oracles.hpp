#pragma once

// Reference computations shared by the unit tests and the acceptance binary.

#include <cmath>
#include <vector>

#include "npc/ode_solver.hpp"

namespace oracle {

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = std::log(x[i]), b = std::log(y[i]);
    sx += a;
    sy += b;
    sxx += a * a;
    sxy += a * b;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Errors at t = 1 on dh/dt = -h, h(0) = 1, for the given substep counts.
inline std::vector<double> decay_errors(npc::SolverMethod method, const std::vector<int>& substeps) {
  std::vector<double> err;
  for (int n : substeps) {
    const double h = npc::integrate_interval([](double y, double) { return -y; }, 1.0, 0.0, 1.0, n, method);
    err.push_back(std::abs(h - std::exp(-1.0)));
  }
  return err;
}

/// Empirical convergence order over a step-halving ladder.
inline double solver_order(npc::SolverMethod method, const std::vector<int>& substeps = {4, 8, 16, 32}) {
  const auto err = decay_errors(method, substeps);
  std::vector<double> steps;
  for (int n : substeps) steps.push_back(1.0 / n);
  return loglog_slope(steps, err);
}

}  // namespace oracle
