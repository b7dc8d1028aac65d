#include <cmath>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "tpnet/learn.hpp"
#include "tpnet/metrics.hpp"

using namespace tpnet;

namespace {

std::pair<ModelParams, TrainSample> fixture(std::uint64_t seed = 3) {
  return grad_check_fixture(ModelConfig::tiny(), 0.3, seed);
}

}  // namespace

TEST(Loss, FirstStepWeightOnly) {
  auto [p, s] = fixture();
  std::vector<double> w(8, 0.0);
  w[0] = 9.0;
  const auto pred = forward(p, s.inputs);
  EXPECT_NEAR(loss(p, s, w), 9.0 * chamfer(pred, s.targets[0]), 1e-12);
}

TEST(Loss, RecomposesFromRollout) {
  auto [p, s] = fixture(4);
  const TrainConfig tc;
  const auto preds = rollout(p, s.inputs, 8);
  double want = 0.0;
  for (std::size_t i = 0; i < 8; ++i) want += tc.loss_weights[i] * chamfer(preds[i], s.targets[i]);
  const double got = loss(p, s, tc);
  EXPECT_LE(std::abs(got - want), 1e-10 * std::abs(want));
  EXPECT_NEAR(backward(p, s, tc).loss, got, 1e-10 * std::abs(got));
}

TEST(Loss, ZeroWeightsGiveZeroGradient) {
  auto [p, s] = fixture();
  const std::vector<double> w(8, 0.0);
  const auto r = backward(p, s, w);
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.grad.values) ASSERT_EQ(g, 0.0);
}

TEST(Loss, RejectsMismatchedSample) {
  auto [p, s] = fixture();
  auto bad = s;
  bad.targets.pop_back();
  EXPECT_THROW(loss(p, bad, TrainConfig{}), std::invalid_argument);
  bad = s;
  bad.inputs[1].pop_back();
  EXPECT_THROW(loss(p, bad, TrainConfig{}), std::invalid_argument);
}

TEST(MaxPool, TieGradientGoesToLowestIndex) {
  Matrix h(4, 2);
  h << 1.0, 5.0,
       3.0, 2.0,
       3.0, 5.0,
       0.0, 5.0;
  const auto pool = detail::max_pool(h);
  EXPECT_EQ(pool.values(0), 3.0);
  EXPECT_EQ(pool.values(1), 5.0);
  RowVector d(2);
  d << 1.0, 2.0;
  const Matrix dh = detail::max_pool_backward(pool, d);
  Matrix want = Matrix::Zero(4, 2);
  want(1, 0) = 1.0;
  want(0, 1) = 2.0;
  EXPECT_EQ(dh, want);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  auto [p, s] = fixture();
  const auto before = p.values;
  AdamState st(p.size());
  adam_step(p, GradBuffer(p.size()), st, TrainConfig{});
  EXPECT_EQ(p.values, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto [p, s] = fixture();
  const auto before = p.values;
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  const auto g = backward(p, s, tc).grad;
  AdamState st(p.size());
  adam_step(p, g, st, tc);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (std::abs(g[i]) < 1e-4) continue;
    const double moved = before[i] - p.values[i];
    ASSERT_NEAR(std::abs(moved), 1e-3, 1e-6) << i;
    ASSERT_EQ(moved > 0, g[i] > 0) << i;
  }
}

TEST(Adam, DeterministicAndValidated) {
  auto run = [] {
    auto [p, s] = fixture();
    AdamState st(p.size());
    for (int i = 0; i < 3; ++i) adam_step(p, backward(p, s, TrainConfig{}).grad, st, TrainConfig{});
    return p.values;
  };
  EXPECT_EQ(run(), run());
  auto [p, s] = fixture();
  AdamState st(p.size() + 1);
  EXPECT_THROW(adam_step(p, GradBuffer(p.size()), st, TrainConfig{}), std::invalid_argument);
}

TEST(ClipGlobalNorm, ScalesOnlyAboveThreshold) {
  GradBuffer g(2);
  g[0] = 3.0;
  g[1] = 4.0;
  EXPECT_EQ(clip_global_norm(g, 10.0), 5.0);
  EXPECT_EQ(g[0], 3.0);
  EXPECT_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0], 0.6, 1e-15);
  EXPECT_NEAR(g[1], 0.8, 1e-15);
}

TEST(GradCheck, HealthyGradientPasses) {
  GradCheckConfig gc;
  const auto r = grad_check(gc);
  EXPECT_GE(r.checked, 1000u);
  EXPECT_EQ(r.total_parameters, param_count(ModelConfig::tiny()));
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_TRUE(r.passed);
}

TEST(GradCheck, CorruptedReadoutIsLocalized) {
  GradCheckConfig gc;
  gc.parameters = 0;
  const auto r = grad_check(gc, [](const ModelParams& p, GradBuffer& g) {
    const auto& range = p.layout.range("readout");
    for (std::size_t i = range.begin; i < range.end; ++i) g[i] = 2.0 * g[i] + 1.0;
  });
  EXPECT_FALSE(r.passed);
  ASSERT_EQ(r.failing_blocks.size(), 1u);
  EXPECT_EQ(r.failing_blocks[0], "readout");
  const auto& range = ParamLayout::build(ModelConfig::tiny()).range("readout");
  for (std::size_t i : r.failing) {
    EXPECT_GE(i, range.begin);
    EXPECT_LT(i, range.end);
  }
}

TEST(GradCheck, InfiniteToleranceAlwaysPasses) {
  GradCheckConfig gc;
  gc.parameters = 50;
  gc.tolerance = std::numeric_limits<double>::infinity();
  const auto r = grad_check(gc, [](const ModelParams&, GradBuffer& g) {
    for (double& v : g.values) v = -v;
  });
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.checked, 50u);
}

TEST(SplitSamples, PartitionIsSeededAndComplete) {
  const auto a = split_samples(100, 0.1, 5);
  EXPECT_EQ(a.validation.size(), 10u);
  EXPECT_EQ(a.train.size(), 90u);
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  all.insert(a.validation.begin(), a.validation.end());
  EXPECT_EQ(all.size(), 100u);
  const auto b = split_samples(100, 0.1, 5);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_NE(split_samples(100, 0.1, 6).validation, a.validation);
  EXPECT_EQ(split_samples(1, 0.9, 1).train.size(), 1u);
  EXPECT_TRUE(split_samples(10, 0.0, 1).validation.empty());
}

TEST(TrainConfig, Validation) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  TrainConfig c;
  c.loss_weights.pop_back();
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.loss_weights[3] = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.learning_rate = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.validation_fraction = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Train, LossDecreasesOnSmallProblem) {
  std::vector<TrainSample> samples;
  for (std::uint64_t seed = 0; seed < 8; ++seed) samples.push_back(grad_check_fixture(ModelConfig::tiny(), 0.0, 100 + seed).second);
  TrainConfig tc;
  tc.epochs = 15;
  tc.batch_size = 4;
  tc.learning_rate = 3e-3;
  tc.validation_fraction = 0.0;
  tc.seed = 2;
  std::size_t calls = 0;
  const auto r = train(tc, samples, ModelConfig::tiny(), [&](const EpochStats&) { ++calls; });
  ASSERT_EQ(r.history.size(), 15u);
  EXPECT_EQ(calls, 15u);
  EXPECT_EQ(r.train_count, 8u);
  EXPECT_EQ(r.validation_count, 0u);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
  EXPECT_TRUE(std::isnan(r.history.front().val_loss));
  for (const auto& e : r.history) EXPECT_TRUE(std::isfinite(e.train_loss));

  const auto again = train(tc, samples, ModelConfig::tiny());
  EXPECT_EQ(again.params.values, r.params.values);
}
