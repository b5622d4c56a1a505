#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "npc/adamax.hpp"
#include "npc/gradcheck.hpp"
#include "npc/gradcheck_models.hpp"

using namespace npc;

TEST(Ops, MatmulIdentityReturnsVector) {
  ad::Tape t;
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  const Tensor v = Tensor({3, 1}, {0.3, -1.7, 2.5});
  const auto out = ad::matmul(t.leaf(eye), t.leaf(v)).value();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(out[i], v[i]);
}

TEST(Ops, TanhAtZero) {
  ad::Tape t;
  const auto x = t.leaf(Tensor::scalar(0.0));
  const auto y = ad::tanh(x);
  EXPECT_EQ(y.value().item(), 0.0);
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x).item(), 1.0);
}

TEST(Ops, XSigmoidXMatchesCentralDifference) {
  ad::Tape t;
  const auto x = t.leaf(Tensor::scalar(1.0));
  t.backward(ad::mul(x, ad::sigmoid(x)));
  auto f = [](double v) { return v / (1.0 + std::exp(-v)); };
  const double h = 1e-5;
  const double fd = (f(1.0 + h) - f(1.0 - h)) / (2 * h);
  EXPECT_LT(relative_error(t.grad(x).item(), fd, 1e-12), 1e-6);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  ad::Tape t;
  const auto a = t.leaf(Tensor({2, 3}));
  const auto b = t.leaf(Tensor({4, 2}));
  try {
    ad::matmul(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ad::add(a, t.leaf(Tensor({3, 2}))), ShapeError);
  EXPECT_THROW(ad::slice(a, 1, 2, 2), ShapeError);
}

TEST(Backward, SumGivesOnes) {
  ad::Tape t;
  const auto w = t.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  t.backward(ad::sum(w));
  const Tensor g = t.grad(w);
  for (double v : g.values()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, HalfSquaredNormGivesSelf) {
  ad::Tape t;
  const Tensor v({4}, {0.5, -2.0, 3.0, 0.1});
  const auto w = t.leaf(v);
  t.backward(ad::scale(ad::sum(ad::square(w)), 0.5));
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_DOUBLE_EQ(t.grad(w)[i], v[i]);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  ad::Tape t1, t2;
  const auto x1 = t1.leaf(Tensor::scalar(1.7));
  t1.backward(ad::mul(x1, x1));
  const auto x2 = t2.leaf(Tensor::scalar(1.7));
  t2.backward(ad::square(x2));
  EXPECT_DOUBLE_EQ(t1.grad(x1).item(), t2.grad(x2).item());
  EXPECT_DOUBLE_EQ(t1.grad(x1).item(), 3.4);
}

TEST(Backward, NonScalarLossRejected) {
  ad::Tape t;
  const auto w = t.leaf(Tensor({2}));
  EXPECT_THROW(t.backward(w), ShapeError);
}

TEST(Backward, TwoLayerMlpMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({3, 4}, rng);
  const auto r = check_gradients(
      "mlp",
      [x](ad::Tape& t, const std::vector<ad::Var>& v) {
        const auto h = ad::tanh(ad::add(ad::matmul(t.constant(x), v[0]), v[1]));
        return ad::sum(ad::tanh(ad::add(ad::matmul(h, v[2]), v[3])));
      },
      {random_tensor({4, 5}, rng), random_tensor({5}, rng), random_tensor({5, 2}, rng), random_tensor({2}, rng)});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(GradCheck, EveryRegisteredOpPasses) {
  for (const auto& c : op_grad_cases(11)) {
    const auto r = check_gradients(c.name, c.build, c.inputs);
    EXPECT_TRUE(r.passed) << c.name << " max rel error " << r.max_rel_error;
    EXPECT_GT(r.entries_checked, 0u);
  }
}

TEST(GradCheck, EveryComposedModelPasses) {
  for (const auto& c : model_grad_cases(5)) {
    const auto r = check_gradients(c.name, c.build, c.inputs);
    EXPECT_TRUE(r.passed) << c.name << " max rel error " << r.max_rel_error;
  }
}

TEST(GradCheck, CorruptedBackwardRuleIsCaught) {
  // square with a backward rule missing its factor of 2
  auto bad_square = [](const ad::Var& x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v *= v;
    const std::size_t ix = x.id;
    return x.tape->record(std::move(out), {x}, [ix](ad::Tape& tp, const Tensor& g) {
      Tensor& dst = tp.grad_ref(ix);
      const Tensor& xv = tp.value(ix);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * xv[i];
    });
  };
  std::mt19937_64 rng(1);
  const auto r = check_gradients(
      "bad_square", [&](ad::Tape&, const std::vector<ad::Var>& v) { return ad::sum(bad_square(v[0])); },
      {random_tensor({5}, rng, 0.5, 1.0)});
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.name, "bad_square");
  EXPECT_GT(r.max_rel_error, 0.4);
}

TEST(Gru, ZeroWeightsZeroStateGivesZero) {
  ParamStore store;
  std::mt19937_64 rng(1);
  const auto g = add_gru(store, "g", Partition::kController, 3, 4, rng);
  for (std::size_t i = 0; i < store.size(); ++i) store.value(i).fill(0.0);
  ad::Tape t;
  const ParamBinding bind(t, store);
  const auto out = gru_cell(bind, g, t.constant(Tensor({2, 4})), t.constant(Tensor({2, 3}, 1.5))).value();
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(Gru, OutputsInOpenUnitInterval) {
  ParamStore store;
  std::mt19937_64 rng(2);
  const auto g = add_gru(store, "g", Partition::kController, 3, 6, rng);
  ad::Tape t;
  const ParamBinding bind(t, store);
  ad::Var h = t.constant(Tensor({4, 6}));
  for (int step = 0; step < 20; ++step) {
    h = gru_cell(bind, g, h, t.constant(random_tensor({4, 3}, rng, -5, 5)));
    for (double v : h.value().values()) {
      EXPECT_GT(v, -1.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Gru, WidthMismatchRejected) {
  ParamStore store;
  std::mt19937_64 rng(3);
  const auto g = add_gru(store, "g", Partition::kController, 3, 4, rng);
  ad::Tape t;
  const ParamBinding bind(t, store);
  EXPECT_THROW(gru_cell(bind, g, t.constant(Tensor({1, 4})), t.constant(Tensor({1, 2}))), ShapeError);
  EXPECT_THROW(gru_cell(bind, g, t.constant(Tensor({1, 5})), t.constant(Tensor({1, 3}))), ShapeError);
}

TEST(Gru, WeightGradientsMatchFiniteDifferences) {
  ParamStore store;
  std::mt19937_64 rng(4);
  const auto g = add_gru(store, "g", Partition::kController, 3, 4, rng);
  const Tensor h0 = random_tensor({2, 4}, rng), x = random_tensor({2, 3}, rng);
  std::vector<Tensor> inputs;
  for (const auto& e : store.entries()) inputs.push_back(e.value);
  const auto r = check_gradients(
      "gru",
      [&](ad::Tape& t, const std::vector<ad::Var>& v) {
        const ParamBinding bind(store, v);
        return ad::sum(gru_cell(bind, g, t.constant(h0), t.constant(x)));
      },
      inputs);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

namespace {

ParamStore scalar_store(double w) {
  ParamStore s;
  s.add("w", Partition::kContinuous, Tensor::vector({w}));
  return s;
}

}  // namespace

TEST(Adamax, ZeroGradientIsIdentity) {
  ParamStore s = scalar_store(1.25);
  s.add("m", Partition::kController, Tensor({2, 2}, {1, 2, 3, 4}));
  const ParamStore before = s;
  Adamax opt;
  for (int i = 0; i < 10; ++i) opt.step(s, {Tensor::vector({0.0}), Tensor({2, 2})});
  EXPECT_TRUE(s == before);
}

TEST(Adamax, MatchesHandSteppedScalar) {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.7;
  ParamStore s = scalar_store(2.0);
  Adamax opt(AdamaxConfig{lr, b1, b2, eps});
  double w = 2.0, m = 0.0, u = 0.0;
  for (int t = 1; t <= 5; ++t) {
    m = b1 * m + (1 - b1) * g;
    u = std::max(b2 * u, std::abs(g) + eps);
    w -= lr / (1 - std::pow(b1, t)) * m / u;
    opt.step(s, {Tensor::vector({g})});
    EXPECT_NEAR(s.value(0)[0], w, 1e-14) << "step " << t;
  }
  // constant gradient: every step moves by ~lr
  EXPECT_NEAR(2.0 - w, 5 * lr, 1e-6);
}

TEST(Adamax, QuadraticBowlConverges) {
  ParamStore s = scalar_store(0.0);
  Adamax opt(AdamaxConfig{0.05});
  for (int i = 0; i < 500; ++i) opt.step(s, {Tensor::vector({s.value(0)[0] - 3.0})});
  EXPECT_LT(std::abs(s.value(0)[0] - 3.0), 1e-2);
}

TEST(Adamax, NanGradientNamesParameter) {
  ParamStore s = scalar_store(1.0);
  Adamax opt;
  try {
    opt.step(s, {Tensor::vector({std::nan("")})});
    FAIL();
  } catch (const NonFiniteGradient& e) {
    EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos);
  }
}

TEST(Adamax, MaskFreezesUnselected) {
  ParamStore s = scalar_store(1.0);
  s.add("v", Partition::kController, Tensor::vector({1.0}));
  Adamax opt;
  const std::vector<bool> mask{true, false};
  opt.step(s, {Tensor::vector({1.0}), Tensor::vector({1.0})}, &mask);
  EXPECT_LT(s.value(0)[0], 1.0);
  EXPECT_EQ(s.value(1)[0], 1.0);
}

TEST(ParamStore, JsonRoundTripIsExact) {
  ParamStore s;
  std::mt19937_64 rng(9);
  s.add_uniform("a", Partition::kController, Shape{3, 2}, 3, rng);
  s.add_uniform("b", Partition::kContinuous, Shape{5}, 7, rng);
  s.add("c", Partition::kContinuous, Tensor::vector({1.0 / 3.0, 1e-300, -0.1}));
  const ParamStore back = ParamStore::from_json(nlohmann::json::parse(s.to_json().dump()));
  EXPECT_TRUE(back == s);
  EXPECT_EQ(back.partition(0), Partition::kController);
  EXPECT_EQ(back.partition(1), Partition::kContinuous);
}

TEST(ParamStore, DuplicateNamesRejected) {
  ParamStore s;
  s.add("a", Partition::kController, Tensor::vector({1}));
  EXPECT_THROW(s.add("a", Partition::kContinuous, Tensor::vector({1})), std::invalid_argument);
}

TEST(ParamStore, InitializationWithinFanInBound) {
  ParamStore s;
  std::mt19937_64 rng(1);
  s.add_uniform("w", Partition::kController, Shape{40, 40}, 16, rng);
  for (double v : s.value(0).values()) EXPECT_LE(std::abs(v), 0.25);
}
