#include <cmath>
#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "support.hpp"
#include "tpnet/evalsuite.hpp"

using namespace tpnet;

namespace {

const std::vector<Trajectory>& small_corpus() {
  static const auto corpus = generate_corpus(WorldConfig{}, InitGrid::paper(), 4, 60, 9);
  return corpus;
}

ModelConfig small_model() {
  ModelConfig c = ModelConfig::tiny();
  c.n_points = 30;
  return c;
}

std::vector<PointSet> shifted_frames(std::size_t m, Vec2 step) {
  const PointSet base{{0.4, 0.4}, {0.5, 0.45}, {0.45, 0.55}};
  std::vector<PointSet> frames;
  for (std::size_t t = 0; t < m; ++t) frames.push_back(translated(base, static_cast<double>(t) * step));
  return frames;
}

}  // namespace

TEST(Evaluate, OracleRolloutHasZeroError) {
  const auto& corpus = small_corpus();
  const std::vector<std::size_t> horizons{1, 10, 40};
  auto oracle = [&](std::size_t i, std::span<const PointSet>, std::size_t steps) {
    const auto& cfg = corpus[i].meta.config;
    std::vector<PointSet> out;
    for (std::size_t s = 0; s < steps; ++s) out.push_back(normalize(corpus[i].frames[5 + s], cfg.box_min, cfg.box_max).points);
    return out;
  };
  const auto r = evaluate_with(oracle, corpus, 5, horizons, OrderingMethod::shuffle(3));
  ASSERT_EQ(r.horizons.size(), 3u);
  EXPECT_EQ(r.trajectories, 4u);
  for (const auto& h : r.horizons) {
    EXPECT_EQ(h.position, 0.0);
    EXPECT_EQ(h.shape, 0.0);
  }
}

TEST(Evaluate, SkipsShortTrajectoriesAndValidates) {
  const auto& corpus = small_corpus();
  const std::vector<std::size_t> too_long{56};
  const auto r = evaluate_baseline_rigid(corpus, 5, too_long, OrderingMethod::identity());
  EXPECT_EQ(r.trajectories, 0u);
  EXPECT_EQ(r.skipped, 4u);
  EXPECT_TRUE(std::isnan(r.horizons[0].position));
  const std::vector<std::size_t> none;
  EXPECT_THROW(evaluate_baseline_rigid(corpus, 5, none, OrderingMethod::identity()), std::invalid_argument);
}

TEST(Evaluate, OrderingDoesNotChangeReport) {
  const auto p = init_params(small_model());
  const std::vector<std::size_t> horizons{1, 20, 50};
  const auto base = evaluate(p, small_corpus(), horizons, OrderingMethod::identity());
  for (const auto& ord : {OrderingMethod::ascending_x(), OrderingMethod::descending_y(), OrderingMethod::shuffle(17)}) {
    const auto r = evaluate(p, small_corpus(), horizons, ord);
    for (std::size_t k = 0; k < horizons.size(); ++k) {
      EXPECT_LE(std::abs(r.horizons[k].position - base.horizons[k].position), 1e-6 * base.horizons[k].position);
      EXPECT_LE(std::abs(r.horizons[k].shape - base.horizons[k].shape), 1e-6 * base.horizons[k].shape);
    }
  }
}

TEST(Evaluate, ReportJsonRoundTrip) {
  const std::vector<std::size_t> horizons{10, 40};
  const auto r = evaluate_baseline_rigid(small_corpus(), 5, horizons, OrderingMethod::identity());
  const nlohmann::json j = r;
  EXPECT_EQ(j.at("model"), "baseline_rigid");
  const auto back = j.get<ErrorReport>();
  ASSERT_EQ(back.horizons.size(), 2u);
  EXPECT_EQ(back.horizons[1].horizon, 40u);
  EXPECT_EQ(back.horizons[1].position, r.horizons[1].position);
}

TEST(BaselineRigid, StaticInputStaysPut) {
  const auto frames = shifted_frames(5, {0, 0});
  const auto out = baseline_rigid(frames, 40);
  ASSERT_EQ(out.size(), 40u);
  for (const auto& f : out) EXPECT_EQ(f, frames.back());
}

TEST(BaselineRigid, ConstantVelocityTranslation) {
  const auto frames = shifted_frames(5, {0.01, 0});
  const auto out = baseline_rigid(frames, 10);
  for (std::size_t s = 1; s <= 10; ++s)
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_NEAR(out[s - 1][i].x, frames.back()[i].x + 0.01 * static_cast<double>(s), 1e-12);
      EXPECT_NEAR(out[s - 1][i].y, frames.back()[i].y, 1e-12);
    }
  for (const auto& f : out) EXPECT_NEAR(shape_error(f, frames.back()), 0.0, 1e-12);
}

TEST(BaselineRigid, ClampsToUnitSquare) {
  const auto frames = shifted_frames(3, {0.2, -0.2});
  const auto out = baseline_rigid(frames, 10);
  for (const auto& f : out)
    for (const auto& p : f) {
      EXPECT_GE(p.x, 0.0);
      EXPECT_LE(p.x, 1.0);
      EXPECT_GE(p.y, 0.0);
      EXPECT_LE(p.y, 1.0);
    }
  EXPECT_EQ(out.back()[0].x, 1.0);
  EXPECT_EQ(out.back()[0].y, 0.0);
  EXPECT_THROW(baseline_rigid(std::span<const PointSet>(frames).first(1), 3), std::invalid_argument);
}

TEST(Scaling, EmptyAndSlope) {
  const std::vector<std::size_t> sizes{30, 60};
  EXPECT_TRUE(scaling_probe(small_model(), sizes, 0).rows.empty());

  const std::vector<double> x{1, 2, 4, 8}, y{3, 6, 12, 24}, y2{1, 4, 16, 64};
  EXPECT_NEAR(log_log_slope(x, y), 1.0, 1e-12);
  EXPECT_NEAR(log_log_slope(x, y2), 2.0, 1e-12);

  const auto t = scaling_probe(small_model(), sizes, 2, 1, 0.005);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0].n, 30u);
  EXPECT_EQ(t.rows[1].n, 60u);
  EXPECT_GT(t.rows[0].median_seconds, 0.0);
  EXPECT_GT(t.rows[1].memory_bytes, t.rows[0].memory_bytes);
  EXPECT_TRUE(std::isfinite(t.slope));
}

TEST(Throughput, PositiveAndFinite) {
  const auto p = init_params(small_model());
  const auto frames = random_frames(3, 30, 4);
  const double r = throughput_probe(p, frames, 0.05);
  EXPECT_GT(r, 0.0);
  EXPECT_TRUE(std::isfinite(r));
  EXPECT_THROW(throughput_probe(p, frames, 0.0), std::invalid_argument);
}

TEST(ExportRollout, WritesFramesAndErrors) {
  test::TempDir dir;
  const auto& traj = small_corpus()[0];
  const auto& cfg = traj.meta.config;
  const auto p = init_params(small_model());
  const auto inputs = evaluation_inputs(traj, 0, 3, OrderingMethod::identity());
  const auto pred = rollout(p, inputs, 40);
  std::vector<PointSet> truth;
  for (std::size_t s = 0; s < 40; ++s) truth.push_back(normalize(traj.frames[3 + s], cfg.box_min, cfg.box_max).points);
  const auto rows = export_rollout(truth, pred, dir / "out");
  ASSERT_EQ(rows.size(), 40u);
  for (std::size_t s = 1; s <= 40; ++s) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%04zu.svg", s);
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / name)) << name;
  }

  std::ifstream csv(dir / "out" / "errors.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "step,position_error,shape_error");
  std::ifstream raw(dir / "out" / "rollout.jsonl");
  std::size_t count = 0;
  while (std::getline(csv, line)) {
    std::string rawline;
    ASSERT_TRUE(std::getline(raw, rawline));
    const auto j = nlohmann::json::parse(rawline);
    const auto t = j.at("truth").get<PointSet>();
    const auto q = j.at("pred").get<PointSet>();
    const double ep = std::stod(line.substr(line.find(',') + 1));
    EXPECT_NEAR(ep, position_error(q, t), 1e-12 * std::max(1.0, ep));
    EXPECT_EQ(j.at("step").get<std::size_t>(), count + 1);
    ++count;
  }
  EXPECT_EQ(count, 40u);

  EXPECT_THROW(export_rollout(truth, std::vector<PointSet>{}, dir / "x"), std::invalid_argument);
}
