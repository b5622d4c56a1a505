#pragma once

// Natural cubic spline control paths.
//
// The spline is linear in the knot values: for fixed knot times every
// evaluation (value or derivative) is a weighted sum of knot values. SplineBasis
// holds that linear map, which serves both the numeric CubicPath and the
// differentiable evaluation used by the CDE backend, where the adjoint of the
// spline solve is the transposed weighting.

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "npc/autodiff.hpp"

namespace npc {

class PathDomainError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Linear map from knot values to natural-spline second derivatives, for fixed knot times.
class SplineBasis {
 public:
  explicit SplineBasis(std::vector<double> times) : t_(std::move(times)) {
    if (t_.size() < 2) throw std::invalid_argument("natural spline needs at least 2 knots, got " + std::to_string(t_.size()));
    for (std::size_t i = 1; i < t_.size(); ++i)
      if (!(t_[i] > t_[i - 1]))
        throw std::invalid_argument("natural spline knot times must be strictly increasing (knot " + std::to_string(i) + ")");
    const std::size_t K = t_.size();
    second_.assign(K, std::vector<double>(K, 0.0));
    if (K == 2) return;
    // Interior unknowns m_1..m_{K-2}; tridiagonal system A m = D y solved once
    // per unit knot vector (Thomas algorithm).
    const std::size_t n = K - 2;
    std::vector<double> sub(n), diag(n), sup(n);
    for (std::size_t j = 1; j + 1 < K; ++j) {
      const double h0 = t_[j] - t_[j - 1];
      const double h1 = t_[j + 1] - t_[j];
      sub[j - 1] = h0;
      diag[j - 1] = 2.0 * (h0 + h1);
      sup[j - 1] = h1;
    }
    std::vector<double> cp(n), rhs(n);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 1; j + 1 < K; ++j) {
        const double h0 = t_[j] - t_[j - 1];
        const double h1 = t_[j + 1] - t_[j];
        const double yjm = (k == j - 1), yj = (k == j), yjp = (k == j + 1);
        rhs[j - 1] = 6.0 * ((yjp - yj) / h1 - (yj - yjm) / h0);
      }
      cp[0] = sup[0] / diag[0];
      rhs[0] = rhs[0] / diag[0];
      for (std::size_t i = 1; i < n; ++i) {
        const double denom = diag[i] - sub[i] * cp[i - 1];
        cp[i] = sup[i] / denom;
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / denom;
      }
      for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= cp[i] * rhs[i + 1];
      for (std::size_t i = 0; i < n; ++i) second_[i + 1][k] = rhs[i];
    }
  }

  const std::vector<double>& times() const { return t_; }
  std::size_t knots() const { return t_.size(); }

  /// Segment index containing t; throws outside [t_0, t_last].
  std::size_t segment(double t) const {
    if (!(t >= t_.front() && t <= t_.back()))
      throw PathDomainError("control path evaluated at t = " + std::to_string(t) + " outside [" +
                            std::to_string(t_.front()) + ", " + std::to_string(t_.back()) + "]");
    auto it = std::upper_bound(t_.begin(), t_.end(), t);
    std::size_t j = static_cast<std::size_t>(it - t_.begin());
    return j == 0 ? 0 : std::min(j - 1, t_.size() - 2);
  }

  /// Weights w with path^(order)(t) = sum_k w_k y_k, order in {0, 1, 2}, on segment `seg`.
  std::vector<double> weights_on_segment(std::size_t seg, double t, int order) const {
    const std::size_t K = t_.size();
    const double h = t_[seg + 1] - t_[seg];
    const double s = t - t_[seg];
    std::vector<double> w(K, 0.0);
    // S(t) = y_j + b s + m_j s^2/2 + (m_{j+1}-m_j) s^3/(6h),
    // b = (y_{j+1}-y_j)/h - h (2 m_j + m_{j+1})/6.
    for (std::size_t k = 0; k < K; ++k) {
      const double yj = (k == seg), yj1 = (k == seg + 1);
      const double mj = second_[seg][k], mj1 = second_[seg + 1][k];
      const double b = (yj1 - yj) / h - h * (2.0 * mj + mj1) / 6.0;
      const double d3 = (mj1 - mj) / h;
      switch (order) {
        case 0: w[k] = yj + b * s + 0.5 * mj * s * s + d3 * s * s * s / 6.0; break;
        case 1: w[k] = b + mj * s + 0.5 * d3 * s * s; break;
        case 2: w[k] = mj + d3 * s; break;
        default: throw std::invalid_argument("spline derivative order must be 0, 1 or 2");
      }
    }
    return w;
  }

  std::vector<double> weights(double t, int order) const { return weights_on_segment(segment(t), t, order); }

 private:
  std::vector<double> t_;
  std::vector<std::vector<double>> second_;  // second_[knot][input knot]
};

/// Natural cubic spline through vector-valued knots with an appended time channel.
class CubicPath {
 public:
  CubicPath(std::vector<double> knot_times, std::vector<std::vector<double>> knot_values, bool append_time = true)
      : basis_(knot_times) {
    if (knot_values.size() != basis_.knots())
      throw std::invalid_argument("build_path: " + std::to_string(knot_values.size()) + " knot values for " +
                                  std::to_string(basis_.knots()) + " knot times");
    const std::size_t ch = knot_values.front().size();
    for (const auto& v : knot_values)
      if (v.size() != ch) throw std::invalid_argument("build_path: knot values differ in width");
    values_ = std::move(knot_values);
    if (append_time)
      for (std::size_t k = 0; k < values_.size(); ++k) values_[k].push_back(basis_.times()[k]);
  }

  std::size_t channels() const { return values_.front().size(); }
  const std::vector<double>& knot_times() const { return basis_.times(); }
  const std::vector<std::vector<double>>& knot_values() const { return values_; }
  const SplineBasis& basis() const { return basis_; }

  std::vector<double> eval(double t) const { return combine(basis_.weights(t, 0)); }
  std::vector<double> eval_derivative(double t) const { return combine(basis_.weights(t, 1)); }
  std::vector<double> eval_second_derivative(double t) const { return combine(basis_.weights(t, 2)); }

  /// Evaluates the polynomial of one segment (possibly at its far endpoint).
  std::vector<double> eval_segment(std::size_t seg, double t, int order) const {
    if (seg + 1 >= basis_.knots()) throw std::out_of_range("eval_segment: no such segment");
    return combine(basis_.weights_on_segment(seg, t, order));
  }

 private:
  std::vector<double> combine(const std::vector<double>& w) const {
    std::vector<double> out(channels(), 0.0);
    for (std::size_t k = 0; k < w.size(); ++k)
      for (std::size_t c = 0; c < out.size(); ++c) out[c] += w[k] * values_[k][c];
    return out;
  }

  SplineBasis basis_;
  std::vector<std::vector<double>> values_;
};

inline CubicPath build_path(std::vector<double> knot_times, std::vector<std::vector<double>> knot_values) {
  return CubicPath(std::move(knot_times), std::move(knot_values));
}

/// Differentiable path derivative: per batch row b, sum_k w_k(t_b) u_k[b,:], where
/// each row may have its own knot times (one SplineBasis per row).
inline ad::Var path_derivative(const std::vector<SplineBasis>& row_bases, const std::vector<ad::Var>& knot_values,
                               const std::vector<double>& row_times) {
  if (row_bases.size() != row_times.size()) throw std::invalid_argument("path_derivative: one time per row required");
  const std::size_t K = knot_values.size();
  std::vector<std::vector<double>> w(K, std::vector<double>(row_bases.size()));
  for (std::size_t b = 0; b < row_bases.size(); ++b) {
    if (row_bases[b].knots() != K) throw std::invalid_argument("path_derivative: knot count mismatch");
    const auto wb = row_bases[b].weights(row_times[b], 1);
    for (std::size_t k = 0; k < K; ++k) w[k][b] = wb[k];
  }
  return ad::weighted_sum(knot_values, w);
}

}  // namespace npc
