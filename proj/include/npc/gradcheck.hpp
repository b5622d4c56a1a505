#pragma once

// Central finite-difference verification of tape adjoints.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "npc/autodiff.hpp"
#include "npc/layers.hpp"

namespace npc {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error, so exact zeros compare absolutely.
  double floor = 1e-6;
  /// Entries probed per input tensor (0 = all), chosen by a seeded shuffle.
  std::size_t max_entries_per_input = 0;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  bool passed = true;
};

/// Builds a scalar loss from inputs placed on the tape as leaves.
using GraphBuilder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double evaluate_builder(const GraphBuilder& build, const std::vector<Tensor>& inputs) {
  ad::Tape tape;
  tape.set_grad_enabled(false);
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  return build(tape, vars).value().item();
}

inline GradCheckResult check_gradients(const std::string& name, const GraphBuilder& build,
                                       std::vector<Tensor> inputs, const GradCheckOptions& opt = {}) {
  GradCheckResult res;
  res.name = name;
  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t));
    ad::Var loss = build(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }
  std::mt19937_64 rng(opt.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<std::size_t> idx(inputs[k].size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (opt.max_entries_per_input && idx.size() > opt.max_entries_per_input) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_entries_per_input);
    }
    for (std::size_t i : idx) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + opt.step;
      const double fp = evaluate_builder(build, inputs);
      inputs[k][i] = orig - opt.step;
      const double fm = evaluate_builder(build, inputs);
      inputs[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double err = relative_error(analytic[k][i], numeric, opt.floor);
      res.max_rel_error = std::max(res.max_rel_error, err);
      ++res.entries_checked;
    }
  }
  res.passed = res.max_rel_error < opt.tolerance;
  return res;
}

struct GradCheckCase {
  std::string name;
  GraphBuilder build;
  std::vector<Tensor> inputs;
};

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(s);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

/// Random projection that turns any tensor into a scalar with generic adjoints.
inline ad::Var project(ad::Tape& tape, const ad::Var& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(x.shape(), rng, 0.5, 1.5);
  return ad::sum(ad::mul(x, tape.constant(std::move(w))));
}

/// One case per registered tensor op, on random conforming inputs.
inline std::vector<GradCheckCase> op_grad_cases(std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  using ad::Var;
  using V = std::vector<Var>;
  std::vector<GradCheckCase> c;
  c.push_back({"add", [](ad::Tape& t, const V& v) { return project(t, ad::add(v[0], v[1]), 11); },
               {random_tensor({3, 4}, rng), random_tensor({4}, rng)}});
  c.push_back({"sub", [](ad::Tape& t, const V& v) { return project(t, ad::sub(v[0], v[1]), 12); },
               {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}});
  c.push_back({"mul", [](ad::Tape& t, const V& v) { return project(t, ad::mul(v[0], v[1]), 13); },
               {random_tensor({2, 5}, rng), random_tensor({5}, rng)}});
  c.push_back({"scale", [](ad::Tape& t, const V& v) { return project(t, ad::scale(v[0], -2.5), 14); },
               {random_tensor({6}, rng)}});
  c.push_back({"matmul", [](ad::Tape& t, const V& v) { return project(t, ad::matmul(v[0], v[1]), 15); },
               {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}});
  c.push_back({"matmul_vec", [](ad::Tape& t, const V& v) { return project(t, ad::matmul(v[0], v[1]), 16); },
               {random_tensor({4}, rng), random_tensor({4, 3}, rng)}});
  c.push_back({"tanh", [](ad::Tape& t, const V& v) { return project(t, ad::tanh(v[0]), 17); },
               {random_tensor({3, 3}, rng, -2, 2)}});
  c.push_back({"sigmoid", [](ad::Tape& t, const V& v) { return project(t, ad::sigmoid(v[0]), 18); },
               {random_tensor({3, 3}, rng, -3, 3)}});
  {
    // Keep inputs away from the kink.
    Tensor x = random_tensor({8}, rng, 0.1, 1.0);
    for (std::size_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
    c.push_back({"relu", [](ad::Tape& t, const V& v) { return project(t, ad::relu(v[0]), 19); }, {x}});
  }
  c.push_back({"square", [](ad::Tape& t, const V& v) { return project(t, ad::square(v[0]), 20); },
               {random_tensor({5}, rng)}});
  c.push_back({"log", [](ad::Tape& t, const V& v) { return project(t, ad::log(v[0]), 21); },
               {random_tensor({5}, rng, 0.5, 2.0)}});
  c.push_back({"sum", [](ad::Tape&, const V& v) { return ad::sum(ad::square(v[0])); }, {random_tensor({2, 3}, rng)}});
  c.push_back({"mean", [](ad::Tape&, const V& v) { return ad::mean(ad::square(v[0])); }, {random_tensor({2, 3}, rng)}});
  c.push_back({"concat",
               [](ad::Tape& t, const V& v) { return project(t, ad::concat({v[0], v[1]}, 1), 22); },
               {random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)}});
  c.push_back({"slice", [](ad::Tape& t, const V& v) { return project(t, ad::slice(v[0], 1, 1, 3), 23); },
               {random_tensor({3, 5}, rng)}});
  c.push_back({"reshape", [](ad::Tape& t, const V& v) { return project(t, ad::reshape(v[0], Shape{3, 2}), 24); },
               {random_tensor({6}, rng)}});
  c.push_back({"softmax_cross_entropy",
               [](ad::Tape&, const V& v) { return ad::softmax_cross_entropy(v[0], {2, 0, 1}); },
               {random_tensor({3, 4}, rng, -2, 2)}});
  c.push_back({"batched_matvec",
               [](ad::Tape& t, const V& v) { return project(t, ad::batched_matvec(v[0], v[1], 3), 25); },
               {random_tensor({2, 6}, rng), random_tensor({2, 2}, rng)}});
  c.push_back({"weighted_sum",
               [](ad::Tape& t, const V& v) {
                 return project(t, ad::weighted_sum({v[0], v[1]}, {{0.3, -1.2}, {2.0, 0.5}}), 26);
               },
               {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}});
  c.push_back({"x_sigmoid_x", [](ad::Tape&, const V& v) { return ad::sum(ad::mul(v[0], ad::sigmoid(v[0]))); },
               {Tensor::vector({1.0})}});
  return c;
}

}  // namespace npc
