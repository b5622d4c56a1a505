#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "npc/gradcheck_models.hpp"

using namespace npc;

namespace {

ModelConfig config(Task task, std::size_t classes = 3, std::size_t dims = 2) {
  auto c = detail::tiny_config(task, Backend::kOdeRnn, 13);
  c.classes = classes;
  c.input_dim = dims;
  return c;
}

void fill(ParamStore& s, const std::string& name, const std::vector<double>& v) {
  auto& t = s.value(name);
  ASSERT_EQ(t.size(), v.size());
  t.values() = v;
}

HiddenTrajectory trajectory(ad::Tape& t, const std::vector<Tensor>& states) {
  HiddenTrajectory H;
  for (const auto& s : states) H.states.push_back(t.constant(s));
  H.times.assign(states.front().shape()[0], {});
  for (auto& r : H.times)
    for (std::size_t k = 0; k < states.size(); ++k) r.push_back(0.5 * static_cast<double>(k));
  return H;
}

std::vector<Tensor> random_states(std::size_t n, std::size_t rows, std::mt19937_64& rng) {
  std::vector<Tensor> v;
  for (std::size_t k = 0; k < n; ++k) v.push_back(random_tensor({rows, 3}, rng, -2, 2));
  return v;
}

// Oracles written against plain arrays.
double ce_oracle(const Tensor& logits, const std::vector<int>& y) {
  const std::size_t B = logits.shape()[0], C = logits.shape()[1];
  double total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    double mx = -1e300;
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, logits[b * C + c]);
    double z = 0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(logits[b * C + c] - mx);
    total += std::log(z) + mx - logits[b * C + static_cast<std::size_t>(y[b])];
  }
  return total / static_cast<double>(B);
}

double mse_oracle(const Tensor& pred, const Tensor& target, const std::vector<bool>& rows) {
  const std::size_t B = pred.shape()[0], D = pred.size() / B;
  double s = 0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (!rows.empty() && !rows[b]) continue;
    ++n;
    for (std::size_t d = 0; d < D; ++d) s += std::pow(pred[b * D + d] - target[b * D + d], 2);
  }
  return s / static_cast<double>(n * D);
}

Tensor state_readout(const NpcModel& m, const Tensor& h) {
  ad::Tape t;
  const ParamBinding bind(t, m.params());
  return m.continuous().readout(bind, t.constant(h)).value();
}

Tensor action_readout(const NpcModel& m, const Tensor& u) {
  ad::Tape t;
  const ParamBinding bind(t, m.params());
  return m.controller().readout(bind, t.constant(u)).value();
}

}  // namespace

TEST(ClassificationCost, UniformLogitsGiveLogC) {
  for (std::size_t C : {2u, 3u, 7u}) {
    NpcModel m(config(Task::kClassification, C));
    fill(m.params(), "readout.w", std::vector<double>(3 * C, 0.0));
    fill(m.params(), "readout.b", std::vector<double>(C, 0.0));
    ad::Tape t;
    const ParamBinding bind(t, m.params());
    std::mt19937_64 rng(1);
    const auto H = trajectory(t, random_states(3, 2, rng));
    EXPECT_NEAR(classification_cost(m, bind, H, {1, 0}).value().item(), std::log(static_cast<double>(C)), 1e-14);
  }
}

TEST(ClassificationCost, SaturatedTrueLogit) {
  NpcModel m(config(Task::kClassification, 2));
  fill(m.params(), "readout.w", std::vector<double>(6, 0.0));
  fill(m.params(), "readout.b", {20.0, 0.0});
  ad::Tape t;
  const ParamBinding bind(t, m.params());
  std::mt19937_64 rng(2);
  EXPECT_LT(classification_cost(m, bind, trajectory(t, random_states(2, 1, rng)), {0}).value().item(), 1e-8);
}

TEST(ClassificationCost, MatchesDirectFormula) {
  NpcModel m(config(Task::kClassification, 4));
  std::mt19937_64 rng(3);
  const auto states = random_states(4, 5, rng);
  const std::vector<int> y{0, 3, 1, 1, 2};
  ad::Tape t;
  const ParamBinding bind(t, m.params());
  const double got = classification_cost(m, bind, trajectory(t, states), y).value().item();
  EXPECT_NEAR(got, ce_oracle(state_readout(m, states.back()), y), 1e-10);
}

TEST(ClassificationCost, InvalidLabelThrows) {
  NpcModel m(config(Task::kClassification, 3));
  ad::Tape t;
  const ParamBinding bind(t, m.params());
  std::mt19937_64 rng(4);
  const auto H = trajectory(t, random_states(2, 2, rng));
  EXPECT_THROW(classification_cost(m, bind, H, {0, 3}), std::out_of_range);
  EXPECT_THROW(classification_cost(m, bind, H, {-1, 0}), std::out_of_range);
}

TEST(ClassificationCost, DependsOnlyOnTerminalState) {
  NpcModel m(config(Task::kClassification, 3));
  std::mt19937_64 rng(5);
  auto states = random_states(4, 3, rng);
  const std::vector<int> y{2, 0, 1};
  auto cost = [&](const std::vector<Tensor>& s) {
    ad::Tape t;
    const ParamBinding bind(t, m.params());
    return classification_cost(m, bind, trajectory(t, s), y).value().item();
  };
  const double base = cost(states);
  for (std::size_t k = 0; k + 1 < states.size(); ++k) states[k] = random_tensor({3, 3}, rng, -5, 5);
  EXPECT_EQ(cost(states), base);
}

TEST(RegressionCost, ExactFitIsZero) {
  NpcModel m(config(Task::kRegression, 3, 2));
  fill(m.params(), "readout.w", std::vector<double>(6, 0.0));
  fill(m.params(), "readout.b", {0.4, -1.2});
  ad::Tape t;
  const ParamBinding bind(t, m.params());
  std::mt19937_64 rng(6);
  WindowTargets tg;
  for (int k = 0; k < 3; ++k) tg.values.push_back(Tensor({2, 2}, {0.4, -1.2, 0.4, -1.2}));
  EXPECT_EQ(regression_cost(m, bind, trajectory(t, random_states(3, 2, rng)), tg).value().item(), 0.0);
}

TEST(RegressionCost, SingleScalarHorizon) {
  NpcModel m(config(Task::kRegression, 3, 1));
  fill(m.params(), "readout.w", {0.0, 0.0, 0.0});
  fill(m.params(), "readout.b", {2.0});
  ad::Tape t;
  const ParamBinding bind(t, m.params());
  std::mt19937_64 rng(7);
  WindowTargets tg;
  tg.values = {Tensor({1, 1}, 0.0), Tensor({1, 1}, 5.0)};
  tg.available = {{false}, {true}};
  EXPECT_DOUBLE_EQ(regression_cost(m, bind, trajectory(t, random_states(2, 1, rng)), tg).value().item(), 9.0);
}

TEST(RegressionCost, MatchesDirectFormulaWithMissingTargets) {
  NpcModel m(config(Task::kRegression, 3, 2));
  std::mt19937_64 rng(8);
  const auto states = random_states(4, 3, rng);
  WindowTargets tg;
  for (int k = 0; k < 4; ++k) tg.values.push_back(random_tensor({3, 2}, rng));
  tg.available = {{true, false, true}, {false, false, false}, {true, true, true}, {false, true, false}};
  double expect = 0;
  for (std::size_t k = 0; k < 4; ++k)
    if (k != 1) expect += mse_oracle(state_readout(m, states[k]), tg.values[k], tg.available[k]);
  ad::Tape t;
  const ParamBinding bind(t, m.params());
  EXPECT_NEAR(regression_cost(m, bind, trajectory(t, states), tg).value().item(), expect, 1e-10);
}

TEST(RegressionCost, NoAvailableTargetsThrows) {
  NpcModel m(config(Task::kRegression, 3, 2));
  std::mt19937_64 rng(9);
  ad::Tape t;
  const ParamBinding bind(t, m.params());
  WindowTargets tg;
  for (int k = 0; k < 2; ++k) tg.values.push_back(random_tensor({2, 2}, rng));
  tg.available = {{false, false}, {false, false}};
  EXPECT_THROW(regression_cost(m, bind, trajectory(t, random_states(2, 2, rng)), tg), std::invalid_argument);
}

TEST(ActionRegularizer, ExactActionReadoutIsZero) {
  NpcModel m(config(Task::kRegression, 3, 2));
  fill(m.params(), "ctrl.readout.w", std::vector<double>(4, 0.0));
  fill(m.params(), "ctrl.readout.b", {1.0, 2.0});
  ad::Tape t;
  const ParamBinding bind(t, m.params());
  std::mt19937_64 rng(10);
  std::vector<ad::Var> U;
  WindowTargets tg;
  for (int k = 0; k < 3; ++k) {
    U.push_back(t.constant(random_tensor({2, 2}, rng)));
    tg.values.push_back(Tensor({2, 2}, {1, 2, 1, 2}));
  }
  EXPECT_EQ(action_regularizer(m, bind, U, 3, tg).value().item(), 0.0);
}

TEST(ActionRegularizer, AdditiveOverActions) {
  NpcModel m(config(Task::kClassification, 2));
  fill(m.params(), "ctrl.readout.w", std::vector<double>(4, 0.0));
  fill(m.params(), "ctrl.readout.b", {0.0, 0.0});
  ad::Tape t;
  const ParamBinding bind(t, m.params());
  std::mt19937_64 rng(11);
  const std::vector<ad::Var> U{t.constant(random_tensor({1, 2}, rng)), t.constant(random_tensor({1, 2}, rng))};
  WindowTargets tg;
  tg.labels = {1};
  EXPECT_NEAR(action_regularizer(m, bind, U, 2, tg).value().item(), 2 * std::log(2.0), 1e-14);
}

TEST(ActionRegularizer, MatchesPerTermSum) {
  for (Task task : {Task::kClassification, Task::kRegression}) {
    NpcModel m(config(task, 3, 2));
    std::mt19937_64 rng(12);
    std::vector<Tensor> U;
    WindowTargets tg;
    tg.labels = {2, 1, 0};
    for (int k = 0; k < 4; ++k) {
      U.push_back(random_tensor({3, 2}, rng));
      tg.values.push_back(random_tensor({3, 2}, rng));
    }
    double expect = 0;
    for (const auto& u : U)
      expect += task == Task::kClassification ? ce_oracle(action_readout(m, u), tg.labels)
                                              : mse_oracle(action_readout(m, u), tg.values[&u - U.data()], {});
    ad::Tape t;
    const ParamBinding bind(t, m.params());
    std::vector<ad::Var> Uv;
    for (const auto& u : U) Uv.push_back(t.constant(u));
    EXPECT_NEAR(action_regularizer(m, bind, Uv, 4, tg).value().item(), expect, 1e-10) << to_string(task);
  }
}

namespace {

struct Pass {
  double value;
  std::vector<Tensor> grads;
};

// Full controller -> backend -> objective pass with gradients for every parameter.
Pass objective_pass(const NpcModel& m, double lambda, bool regularizer_only = false) {
  std::mt19937_64 rng(14);
  ad::Tape t;
  const ParamBinding bind(t, m.params());
  const auto& c = m.controller();
  ad::Var z = c.step(bind, c.zero_state(t, 2), t.constant(random_tensor({2, 2}, rng)), t.constant(Tensor({2, 1}, 0.3)));
  const auto U = c.emit(bind, z);
  const auto& cont = m.continuous();
  const auto H = cont.evolve(bind, cont.encode(bind, t.constant(random_tensor({2, 2}, rng))), U, detail::window_times());
  WindowTargets tg;
  tg.labels = {1, 2};
  for (int k = 0; k < 3; ++k) tg.values.push_back(random_tensor({2, 2}, rng));
  const ad::Var obj =
      regularizer_only ? action_regularizer(m, bind, U, H.states.size(), tg) : total_objective(m, bind, H, U, tg, lambda);
  t.backward(obj);
  return {obj.value().item(), bind.gradients()};
}

}  // namespace

TEST(TotalObjective, LambdaZeroIsTaskCost) {
  NpcModel m(config(Task::kClassification));
  std::mt19937_64 rng(15);
  const auto states = random_states(3, 2, rng);
  ad::Tape t;
  const ParamBinding bind(t, m.params());
  const auto H = trajectory(t, states);
  const std::vector<ad::Var> U{t.constant(random_tensor({2, 2}, rng)), t.constant(random_tensor({2, 2}, rng)),
                               t.constant(random_tensor({2, 2}, rng))};
  WindowTargets tg;
  tg.labels = {0, 2};
  EXPECT_EQ(total_objective(m, bind, H, U, tg, 0.0).value().item(),
            classification_cost(m, bind, H, tg.labels).value().item());
  EXPECT_THROW(total_objective(m, bind, H, U, tg, -0.1), std::invalid_argument);
}

TEST(TotalObjective, ZeroRegularizerLeavesTaskCost) {
  NpcModel m(config(Task::kRegression, 3, 2));
  fill(m.params(), "ctrl.readout.w", std::vector<double>(4, 0.0));
  fill(m.params(), "ctrl.readout.b", {0.5, 0.5});
  std::mt19937_64 rng(16);
  ad::Tape t;
  const ParamBinding bind(t, m.params());
  const auto H = trajectory(t, random_states(3, 2, rng));
  std::vector<ad::Var> U;
  WindowTargets tg;
  for (int k = 0; k < 3; ++k) {
    U.push_back(t.constant(random_tensor({2, 2}, rng)));
    tg.values.push_back(Tensor({2, 2}, 0.5));
  }
  EXPECT_DOUBLE_EQ(total_objective(m, bind, H, U, tg, 0.7).value().item(),
                   regression_cost(m, bind, H, tg).value().item());
}

TEST(TotalObjective, AffineInLambda) {
  NpcModel m(config(Task::kClassification));
  const double o0 = objective_pass(m, 0.0).value, o1 = objective_pass(m, 1.0).value, o2 = objective_pass(m, 2.0).value;
  EXPECT_NEAR(o2 - o0, 2 * (o1 - o0), 1e-10);
}

TEST(TotalObjective, NonNegative) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = config(trial % 2 ? Task::kRegression : Task::kClassification);
    c.seed = static_cast<std::uint64_t>(trial);
    NpcModel m(c);
    EXPECT_GE(objective_pass(m, 0.3).value, 0.0);
  }
}

TEST(TotalObjective, GradientReachesControllerWithoutRegularizer) {
  NpcModel m(config(Task::kClassification));
  const auto p = objective_pass(m, 0.0);
  double psi = 0;
  for (std::size_t i = 0; i < m.params().size(); ++i)
    if (m.params().partition(i) == Partition::kController)
      for (double g : p.grads[i].values()) psi += g * g;
  EXPECT_GT(psi, 0.0);
}

TEST(TotalObjective, RegularizerTouchesOnlyController) {
  NpcModel m(config(Task::kClassification));
  const auto p = objective_pass(m, 0.0, true);
  double psi = 0;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    if (m.params().partition(i) == Partition::kContinuous) {
      for (double g : p.grads[i].values()) EXPECT_EQ(g, 0.0) << m.params().entry(i).name;
    } else {
      for (double g : p.grads[i].values()) psi += g * g;
    }
  }
  EXPECT_GT(psi, 0.0);
}
