#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "npc/gradcheck_models.hpp"
#include "npc/trainer.hpp"

using namespace npc;

namespace {

ModelConfig reg_config(Backend b = Backend::kOdeRnn, std::size_t horizon = 2) {
  ModelConfig c;
  c.task = Task::kRegression;
  c.backend = b;
  c.input_dim = 1;
  c.controller_hidden = 6;
  c.head_hidden = 8;
  c.action_dim = 2;
  c.hidden = 6;
  c.fdepth = 1;
  c.fwidth = 8;
  c.horizon = horizon;
  c.window = 3;
  c.solver = {SolverMethod::kRk4, 1};
  c.seed = 4;
  return c;
}

TimeSeries line(std::size_t n, double slope, double offset, double dt = 0.25) {
  TimeSeries s;
  for (std::size_t i = 0; i < n; ++i) {
    s.times.push_back(static_cast<double>(i) * dt);
    s.values.push_back({offset + slope * s.times.back()});
  }
  return s;
}

std::vector<TimeSeries> labeled(std::size_t count, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0, 0.1);
  std::vector<TimeSeries> out;
  for (std::size_t k = 0; k < count; ++k) {
    TimeSeries s;
    const int y = static_cast<int>(k % 2);
    for (std::size_t i = 0; i < n; ++i) {
      s.times.push_back(0.2 * static_cast<double>(i));
      s.values.push_back({(y ? 1.0 : -1.0) * std::sin(s.times.back()) + noise(rng), noise(rng)});
    }
    s.label = y;
    out.push_back(s);
  }
  return out;
}

ModelConfig cls_config(std::size_t horizon = 3) {
  auto c = detail::tiny_config(Task::kClassification, Backend::kOdeRnn, 8);
  c.classes = 2;
  c.horizon = horizon;
  return c;
}

TrainConfig quick(std::size_t epochs, double lr = 0.01) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch = 4;
  t.lr = lr;
  t.lambda = 0.1;
  t.patience = 0;
  t.seed = 3;
  return t;
}

}  // namespace

TEST(Train, ZeroInnerStepsLeavesParametersUnchanged) {
  for (Method method : {Method::kNpc, Method::kBaseline}) {
    auto c = cls_config();
    if (method == Method::kBaseline) c = baseline_config(c);
    NpcModel m(c);
    const ParamStore before = m.params();
    auto cfg = quick(1);
    cfg.inner_steps = 0;
    const auto rep = train(m, labeled(6, 8, 1), cfg, method);
    EXPECT_TRUE(m.params() == before) << to_string(method);
    EXPECT_FALSE(rep.window_objectives.empty());
  }
}

TEST(Train, WindowTraceLengthMatchesWindowsProcessed) {
  NpcModel m(cls_config(3));
  auto cfg = quick(2);
  cfg.batch = 3;
  // two length buckets: 4 series of length 7 and 2 of length 5
  auto data = labeled(4, 7, 2);
  for (auto& s : labeled(2, 5, 3)) data.push_back(s);
  const auto rep = train(m, data, cfg);
  // per epoch: bucket 7 -> 2 batches x 6 anchors, bucket 5 -> 1 batch x 4 anchors
  EXPECT_EQ(rep.window_objectives.size(), 2u * (2 * 6 + 4));
  EXPECT_EQ(rep.epoch_losses.size(), 2u);
  EXPECT_EQ(rep.epochs_run, 2u);
}

TEST(Train, ShortSeriesSkipped) {
  NpcModel m(cls_config(4));
  auto data = labeled(3, 8, 4);
  data.push_back(labeled(1, 4, 5).front());
  const auto rep = train(m, data, quick(1));
  EXPECT_EQ(rep.skipped_series, 1u);
  EXPECT_THROW(train(m, labeled(2, 3, 6), quick(1)), std::invalid_argument);
}

TEST(Train, NonFiniteObjectiveAbortsWithWindowIndex) {
  NpcModel m(reg_config());
  auto s = line(6, 1.0, 0.0);
  s.values[3][0] = std::nan("");
  try {
    train(m, {s}, quick(1));
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    // anchor 1 is the first window whose targets reach the NaN row
    EXPECT_EQ(e.window(), 1u);
  }
}

TEST(Train, TaskAndLabelChecks) {
  NpcModel m(cls_config());
  auto data = labeled(2, 6, 7);
  data[1].label.reset();
  EXPECT_THROW(train(m, data, quick(1)), std::invalid_argument);
  data[1].label = 5;
  EXPECT_THROW(train(m, data, quick(1)), std::invalid_argument);
  NpcModel wide(reg_config());
  EXPECT_THROW(train(wide, labeled(2, 6, 7), quick(1)), std::invalid_argument);
}

TEST(Train, SeedDeterminism) {
  auto run = [] {
    NpcModel m(cls_config());
    auto rep = train(m, labeled(8, 7, 9), quick(2));
    return std::make_pair(rep.window_objectives, m.params().to_json().dump());
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Train, ConstantSeriesFitsQuickly) {
  // The readout bias alone can represent a constant, so the planned objective
  // is driven to zero.
  NpcModel m(reg_config());
  const auto s = line(6, 0.0, 0.7);
  auto cfg = quick(40, 0.02);
  cfg.lambda = 0.0;
  const auto rep = train(m, {s}, cfg);
  ASSERT_EQ(rep.window_objectives.size(), 200u);
  EXPECT_LT(rep.window_objectives.back(), 1e-4);
}

TEST(Train, InnerStepsRarelyIncreaseWindowObjective) {
  const auto train_set = gen_toy_train(1);
  const auto norm = Normalizer::fit(train_set);
  std::vector<TimeSeries> data(train_set.begin(), train_set.begin() + 16);
  data = norm.apply(data);
  ModelConfig c;
  c.task = Task::kClassification;
  c.input_dim = 1;
  c.classes = 2;
  c.controller_hidden = c.hidden = c.head_hidden = 8;
  c.action_dim = 4;
  c.horizon = 5;
  c.window = 4;
  c.solver = {SolverMethod::kRk4, 1};
  c.seed = 1;
  NpcModel m(c);
  TrainConfig t;
  t.epochs = 1;
  t.batch = 16;
  t.lr = 0.003;
  t.lambda = 0.2;
  t.inner_steps = 1;
  t.record_post_objective = true;
  const auto rep = train(m, data, t);
  ASSERT_EQ(rep.window_post_objectives.size(), rep.window_objectives.size());
  std::size_t improved = 0;
  for (std::size_t w = 0; w < rep.window_objectives.size(); ++w)
    improved += rep.window_post_objectives[w] <= rep.window_objectives[w];
  EXPECT_GE(static_cast<double>(improved), 0.9 * static_cast<double>(rep.window_objectives.size()));
}

TEST(Train, EarlyStopOnPlateau) {
  // Without updates the epoch loss repeats exactly: one epoch sets the best,
  // `patience` stale epochs follow.
  NpcModel m(reg_config());
  auto cfg = quick(300);
  cfg.inner_steps = 0;
  cfg.patience = 5;
  const auto rep = train(m, {line(6, 0.0, 0.3)}, cfg);
  EXPECT_TRUE(rep.early_stopped);
  EXPECT_EQ(rep.epochs_run, 6u);
}

TEST(Train, PlateauToleranceIsRelative) {
  detail::Plateau p(2, 1e-2);
  EXPECT_FALSE(p.update(1.0));
  EXPECT_FALSE(p.update(0.995));  // within 1%: stale
  EXPECT_FALSE(p.update(0.98));   // improvement resets
  EXPECT_FALSE(p.update(0.979));
  EXPECT_TRUE(p.update(0.978));
  detail::Plateau off(0, 1e-2);
  for (int i = 0; i < 20; ++i) EXPECT_FALSE(off.update(1.0));
}

TEST(Train, BaselineRejectsCdeBackend) {
  NpcModel m(reg_config(Backend::kCde));
  EXPECT_THROW(train(m, {line(6, 1.0, 0.0)}, quick(1), Method::kBaseline), std::invalid_argument);
}

TEST(Buckets, GroupByLengthAndCoverAll) {
  auto data = labeled(5, 6, 1);
  for (auto& s : labeled(7, 9, 2)) data.push_back(s);
  std::vector<std::size_t> use(data.size());
  for (std::size_t i = 0; i < use.size(); ++i) use[i] = i;
  std::mt19937_64 rng(1);
  const auto b = bucket_batches(data, use, 3, &rng);
  std::set<std::size_t> seen;
  for (const auto& chunk : b) {
    EXPECT_LE(chunk.size(), 3u);
    for (std::size_t i : chunk) {
      EXPECT_EQ(data[i].length(), data[chunk.front()].length());
      seen.insert(i);
    }
  }
  EXPECT_EQ(seen.size(), data.size());
  EXPECT_EQ(b.size(), 2u + 3u);
}

TEST(Rollout, CommittedPathIgnoresDiscardedPlan) {
  for (Backend backend : {Backend::kOdeRnn, Backend::kCde}) {
    auto c = reg_config(backend, 4);
    NpcModel a(c), b(c);
    // Scramble the head outputs that produce u_{i+2..i+M} in one copy.
    auto& w = b.params().value("ctrl.head.out.w");
    auto& bias = b.params().value("ctrl.head.out.b");
    const std::size_t cols = w.shape()[1], keep = 2 * c.action_dim;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> d(0, 3);
    for (std::size_t r = 0; r < w.shape()[0]; ++r)
      for (std::size_t j = keep; j < cols; ++j) w[r * cols + j] = d(rng);
    for (std::size_t j = keep; j < cols; ++j) bias[j] = d(rng);
    const auto s = line(9, 0.5, -0.2);
    const auto ra = rollout(a, make_batch({&s})), rb = rollout(b, make_batch({&s}));
    for (std::size_t i = 0; i < ra.h.size(); ++i) EXPECT_EQ(ra.h[i].values(), rb.h[i].values()) << to_string(backend);
    EXPECT_NE(ra.plan.back().values(), rb.plan.back().values());
  }
}

TEST(Classify, TieGoesToClassZero) {
  const double logits[2] = {0.3, 0.3};
  const auto p = predict_from_logits(logits, 2);
  EXPECT_EQ(p.label, 0);
  EXPECT_DOUBLE_EQ(p.probabilities[0], 0.5);
}

TEST(Classify, ProbabilitiesFormADistribution) {
  NpcModel m(cls_config());
  for (const auto& p : classify_all(m, labeled(5, 7, 11))) {
    double s = 0;
    for (double q : p.probabilities) {
      EXPECT_GE(q, 0.0);
      EXPECT_LE(q, 1.0);
      s += q;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Classify, Errors) {
  NpcModel m(cls_config());
  EXPECT_THROW(classify(m, TimeSeries{}), std::invalid_argument);
  NpcModel r(reg_config());
  EXPECT_THROW(classify(r, line(4, 1, 0)), std::invalid_argument);
}

TEST(Classify, BatchedMatchesSingle) {
  NpcModel m(cls_config());
  const auto data = labeled(6, 7, 12);
  const auto all = classify_all(m, data);
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t c = 0; c < 2; ++c)
      EXPECT_NEAR(all[i].probabilities[c], classify(m, data[i]).probabilities[c], 1e-12);
}

TEST(Interpolate, ObservedTimeGivesCommittedReadout) {
  NpcModel m(reg_config(Backend::kOdeRnn, 2));
  const auto s = line(6, 1.0, 0.0);
  const auto r = rollout(m, make_batch({&s}));
  const auto out = interpolate(m, s, {s.times[3]});
  ad::Tape t;
  const ParamBinding bind(t, m.params());
  EXPECT_EQ(out[0], m.continuous().readout(bind, t.constant(r.h[3])).value().values());
}

TEST(Interpolate, EmptyQueryAndRange) {
  NpcModel m(reg_config());
  const auto s = line(5, 1.0, 0.0);
  EXPECT_TRUE(interpolate(m, s, {}).empty());
  EXPECT_THROW(interpolate(m, s, {-0.1}), std::out_of_range);
  EXPECT_THROW(interpolate(m, s, {s.times.back() + 0.01}), std::out_of_range);
  EXPECT_EQ(interpolate(m, s, {0.1, 0.6, 1.0}).size(), 3u);
}

TEST(Interpolate, ContinuousInQueryTime) {
  for (Backend b : {Backend::kOdeRnn, Backend::kCde}) {
    NpcModel m(reg_config(b));
    const auto s = line(5, 1.0, 0.0);
    const double mid = 0.6;
    const auto out = interpolate(m, s, {mid - 1e-7, mid + 1e-7});
    EXPECT_NEAR(out[0][0], out[1][0], 1e-5) << to_string(b);
  }
}

TEST(Extrapolate, CountsAndErrors) {
  NpcModel m(reg_config(Backend::kOdeRnn, 3));
  const auto s = line(5, 1.0, 0.0);
  EXPECT_TRUE(extrapolate(m, s, {}).empty());
  EXPECT_EQ(extrapolate(m, s, {1.1, 1.3, 1.6}).size(), 3u);
  EXPECT_THROW(extrapolate(m, s, {1.1, 1.2, 1.3, 1.4}), std::invalid_argument);
  EXPECT_THROW(extrapolate(m, s, {1.0}), std::invalid_argument);
}

TEST(Extrapolate, TrainedOnConstantStaysNearConstant) {
  NpcModel m(reg_config(Backend::kOdeRnn, 3));
  const auto s = line(8, 0.0, 1.5);
  auto cfg = quick(60, 0.02);
  train(m, {s}, cfg);
  for (const auto& v : extrapolate(m, s, {2.0, 2.25, 2.5})) EXPECT_NEAR(v[0], 1.5, 0.15);
}

TEST(Extrapolate, TrainedOnTrendFollowsSlopeSign) {
  for (double slope : {1.0, -1.0}) {
    NpcModel m(reg_config(Backend::kOdeRnn, 3));
    std::vector<TimeSeries> data;
    for (int k = 0; k < 4; ++k) data.push_back(line(10, slope, 0.2 * k));
    auto cfg = quick(150, 0.01);
    train(m, data, cfg);
    const auto out = extrapolate(m, data[0], {2.5, 2.75, 3.0});
    EXPECT_GT((out[2][0] - out[0][0]) * slope, 0.0) << slope;
  }
}
