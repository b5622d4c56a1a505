#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "npc/param_store.hpp"

namespace npc {

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamaxConfig {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adamax optimizer state: first moment and exponentially weighted infinity norm.
class Adamax {
 public:
  explicit Adamax(AdamaxConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg_.lr > 0)) throw std::invalid_argument("Adamax: learning rate must be positive");
  }

  const AdamaxConfig& config() const { return cfg_; }
  long steps() const { return t_; }

  /// Applies one update. `mask`, if given, selects which parameters move.
  void step(ParamStore& params, const std::vector<Tensor>& grads, const std::vector<bool>* mask = nullptr) {
    if (grads.size() != params.size())
      throw std::invalid_argument("Adamax: " + std::to_string(grads.size()) + " gradients for " +
                                  std::to_string(params.size()) + " parameters");
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (grads[i].size() != params.value(i).size())
        throw ShapeError("Adamax: gradient shape " + grads[i].shape().str() + " for parameter '" +
                         params.entry(i).name + "' of shape " + params.value(i).shape().str());
      if (!grads[i].all_finite())
        throw NonFiniteGradient("Adamax: non-finite gradient for parameter '" + params.entry(i).name + "'");
    }
    if (m_.empty()) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_.push_back(Tensor::zeros_like(params.value(i)));
        u_.push_back(Tensor::zeros_like(params.value(i)));
      }
    }
    ++t_;
    const double step_size = cfg_.lr / (1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (mask && !(*mask)[i]) continue;
      Tensor& p = params.value(i);
      Tensor& m = m_[i];
      Tensor& u = u_[i];
      const Tensor& g = grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        u[j] = std::max(cfg_.beta2 * u[j], std::abs(g[j]) + cfg_.eps);
        p[j] -= step_size * m[j] / u[j];
      }
    }
  }

 private:
  AdamaxConfig cfg_;
  std::vector<Tensor> m_, u_;
  long t_ = 0;
};

}  // namespace npc
