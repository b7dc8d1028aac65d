#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "tpnet/sim.hpp"

using namespace tpnet;

namespace {

WorldConfig no_gravity() {
  WorldConfig c;
  c.gravity = {0.0, 0.0};
  return c;
}

SoftBodyState lone_particle(Vec2 x, Vec2 v) {
  SoftBodyState s;
  s.positions = {x};
  s.velocities = {v};
  return s;
}

}  // namespace

TEST(WorldConfig, DefaultsMatchPaperList) {
  const WorldConfig c;
  EXPECT_EQ(c.n, 30u);
  EXPECT_EQ(c.gravity.x, 0.0);
  EXPECT_EQ(c.gravity.y, -0.5);
  EXPECT_EQ(c.friction, 1.0);
  EXPECT_EQ(c.spring_frequency_hz, 1.0);
  EXPECT_EQ(c.spring_damping_ratio, 0.0);
  EXPECT_EQ(c.particle_restitution, 0.0);
  EXPECT_EQ(c.wall_restitution, 1.0);
  EXPECT_EQ(c.radius, 2.0);
}

TEST(WorldConfig, RejectsInvertedBox) {
  WorldConfig c;
  c.box_max = {-1.0, 45.0};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(BuildSoftBody, ParticlesOnCircleAtEqualAngles) {
  const WorldConfig c;
  const InitCondition init{{22.5, 22.5}, 1.0, 180.0};
  const auto s = build_soft_body(c, init);
  ASSERT_EQ(s.positions.size(), 30u);
  for (std::size_t i = 0; i < 30; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / 30.0;
    EXPECT_NEAR(s.positions[i].x, 22.5 + 2.0 * std::cos(a), 1e-12);
    EXPECT_NEAR(s.positions[i].y, 22.5 + 2.0 * std::sin(a), 1e-12);
  }
}

TEST(BuildSoftBody, SpringCountMatchesBruteForceEnumeration) {
  const WorldConfig c;
  const auto s = build_soft_body(c, {});
  std::size_t expected = 0;
  for (int i = 0; i < 30; ++i)
    for (int j = i + 1; j < 30; ++j) {
      const int d = std::min(j - i, 30 - (j - i));
      if (d >= 1 && d < 12) ++expected;
    }
  EXPECT_EQ(expected, 330u);
  EXPECT_EQ(s.springs.size(), expected);
  for (const auto& sp : s.springs) {
    EXPECT_NE(sp.i, sp.j);
    EXPECT_NEAR(sp.rest_length, norm(s.positions[sp.j] - s.positions[sp.i]), 1e-12);
    EXPECT_NEAR(sp.stiffness, std::pow(2.0 * std::numbers::pi, 2), 1e-12);
    EXPECT_EQ(sp.damping_coeff, 0.0);
  }
}

TEST(BuildSoftBody, ThreeParticlesFormTriangle) {
  WorldConfig c;
  c.n = 3;
  c.radius = 1.0;
  const auto s = build_soft_body(c, {});
  ASSERT_EQ(s.springs.size(), 3u);
  for (const auto& sp : s.springs) EXPECT_NEAR(sp.rest_length, std::sqrt(3.0), 1e-12);
}

TEST(BuildSoftBody, RejectsBodyOutsideBox) {
  EXPECT_THROW(build_soft_body(WorldConfig{}, {{1.0, 22.5}, 1.0, 180.0}), std::invalid_argument);
}

TEST(InitialImpulse, DirectionAndScale) {
  const auto s = build_soft_body(WorldConfig{}, {});
  auto v = apply_initial_impulse(s, {{22.5, 22.5}, 1.0, 180.0}, 1.0).velocities;
  for (const auto& q : v) {
    EXPECT_NEAR(q.x, -1.0, 1e-12);
    EXPECT_NEAR(q.y, 0.0, 1e-12);
  }
  v = apply_initial_impulse(s, {{22.5, 22.5}, 1.6, 270.0}, 1.0).velocities;
  for (const auto& q : v) {
    EXPECT_NEAR(q.x, 0.0, 1e-12);
    EXPECT_NEAR(q.y, -1.6, 1e-12);
  }
  v = apply_initial_impulse(s, {{22.5, 22.5}, 1.3, 225.0}, 2.0).velocities;
  for (const auto& q : v) {
    EXPECT_NEAR(q.x, -1.8384776310850235, 1e-12);
    EXPECT_NEAR(q.y, -1.8384776310850235, 1e-12);
  }
}

TEST(Step, FreeFlightVelocityChangesByGravityTimesDt) {
  const WorldConfig c;
  const auto s0 = build_soft_body(c, {{22.5, 22.5}, 1.0, 200.0});
  const auto s1 = step(s0, c);
  EXPECT_FALSE(s1.contact);
  for (std::size_t i = 0; i < s0.velocities.size(); ++i) {
    EXPECT_NEAR(s1.velocities[i].x - s0.velocities[i].x, 0.0, 1e-12);
    EXPECT_NEAR(s1.velocities[i].y - s0.velocities[i].y, -0.5 * c.dt, 1e-12);
  }
}

TEST(Step, FreeFlightMatchesSemiImplicitClosedForm) {
  const WorldConfig c;
  auto s = build_soft_body(c, {{22.5, 30.0}, 1.0, 180.0});
  const auto x0 = s.positions;
  const Vec2 v0 = s.velocities[0];
  const double h = c.dt / c.substeps;
  for (std::size_t frame = 1; frame <= 60; ++frame) {
    advance(s, c, frame);
    ASSERT_FALSE(s.contact);
    const double n = static_cast<double>(frame) * c.substeps;
    for (std::size_t i = 0; i < x0.size(); ++i) {
      const Vec2 expect = x0[i] + (n * h) * v0 + (h * h * n * (n + 1.0) / 2.0) * c.gravity;
      EXPECT_NEAR(s.positions[i].x, expect.x, 1e-9);
      EXPECT_NEAR(s.positions[i].y, expect.y, 1e-9);
    }
  }
}

TEST(Step, ParticleAtRestOnFloorStaysAtRest) {
  const WorldConfig c;
  auto s = lone_particle({10.0, 0.0}, {0.0, 0.0});
  for (int i = 0; i < 120; ++i) advance(s, c);
  EXPECT_EQ(s.positions[0].x, 10.0);
  EXPECT_EQ(s.positions[0].y, 0.0);
  EXPECT_EQ(s.velocities[0].x, 0.0);
  EXPECT_EQ(s.velocities[0].y, 0.0);
}

TEST(Step, ElasticWallBounceConservesSpeed) {
  WorldConfig c = no_gravity();
  auto s = lone_particle({1.0, 20.0}, {-6.0, 0.0});
  bool hit = false;
  for (int i = 0; i < 30; ++i) {
    advance(s, c);
    hit = hit || s.contact;
    EXPECT_NEAR(norm(s.velocities[0]), 6.0, 1e-9);
  }
  EXPECT_TRUE(hit);
  EXPECT_GT(s.velocities[0].x, 0.0);

  c.friction = 0.0;
  s = lone_particle({44.0, 20.0}, {5.0, 3.0});
  for (int i = 0; i < 30; ++i) {
    advance(s, c);
    EXPECT_NEAR(norm(s.velocities[0]), std::sqrt(34.0), 1e-9);
  }
  EXPECT_LT(s.velocities[0].x, 0.0);
}

TEST(Step, TwoParticleOscillatorHalfPeriod) {
  WorldConfig c = no_gravity();
  const double k = c.spring_stiffness();
  SoftBodyState s;
  const double rest = 4.0, delta = 0.5;
  s.positions = {{20.0, 22.5}, {20.0 + rest + delta, 22.5}};
  s.velocities = {{0.0, 0.0}, {0.0, 0.0}};
  s.springs = {{0, 1, rest, k, 0.0}};
  // Sign changes of the extension, interpolated between frames.
  std::vector<double> crossings;
  double prev = delta;
  for (int frame = 1; frame <= 240 && crossings.size() < 3; ++frame) {
    advance(s, c);
    const double ext = norm(s.positions[1] - s.positions[0]) - rest;
    if ((prev > 0.0) != (ext > 0.0)) {
      const double frac = prev / (prev - ext);
      crossings.push_back((frame - 1 + frac) * c.dt);
    }
    prev = ext;
  }
  ASSERT_GE(crossings.size(), 3u);
  const double analytic = std::numbers::pi * std::sqrt((c.particle_mass / 2.0) / k);
  EXPECT_NEAR(crossings[1] - crossings[0], analytic, 0.02 * analytic);
  EXPECT_NEAR(crossings[2] - crossings[1], analytic, 0.02 * analytic);
}

TEST(Step, SpringForcesCancelPairwise) {
  WorldConfig c = no_gravity();
  auto s = build_soft_body(c, {});
  s.positions[3] += Vec2{0.4, -0.2};
  s.velocities[7] = {1.0, 2.0};
  std::vector<Vec2> forces;
  accumulate_forces(s, c, forces);
  Vec2 sum{};
  for (const auto& f : forces) sum += f;
  EXPECT_NEAR(sum.x, 0.0, 1e-10);
  EXPECT_NEAR(sum.y, 0.0, 1e-10);
}

TEST(Step, NonFiniteStateSignalsDivergence) {
  WorldConfig c = no_gravity();
  auto s = lone_particle({10.0, 10.0}, {std::numeric_limits<double>::infinity(), 0.0});
  EXPECT_THROW(advance(s, c, 4), SimulationDivergence);
}

TEST(RunTrajectory, LengthAndBoxInvariant) {
  const WorldConfig c;
  const auto traj = run_trajectory(c, {{5.0, 5.0}, 1.6, 225.0}, 600, 3);
  ASSERT_EQ(traj.size(), 600u);
  ASSERT_EQ(traj.contact.size(), 600u);
  bool any_contact = false;
  for (std::size_t t = 0; t < traj.size(); ++t) {
    any_contact = any_contact || traj.contact[t];
    for (const auto& p : traj.frames[t]) {
      EXPECT_TRUE(c.box().contains(p));
    }
  }
  EXPECT_TRUE(any_contact);
}

TEST(RunTrajectory, SingleStepEqualsOneStepOfLaunchedBody) {
  const WorldConfig c;
  const InitCondition init{{30.0, 12.0}, 1.15, 235.0};
  const auto traj = run_trajectory(c, init, 1, 0);
  const auto expect = step(build_soft_body(c, init), c);
  ASSERT_EQ(traj.size(), 1u);
  EXPECT_EQ(traj.frames[0], expect.positions);
}

TEST(RunTrajectory, StaticEquilibriumWithoutGravityOrImpulse) {
  const WorldConfig c = no_gravity();
  const auto traj = run_trajectory(c, {{22.5, 22.5}, 0.0, 180.0}, 50, 0);
  const auto start = build_soft_body(c, {{22.5, 22.5}, 0.0, 180.0}).positions;
  for (const auto& f : traj.frames)
    for (std::size_t i = 0; i < f.size(); ++i) {
      EXPECT_NEAR(f[i].x, start[i].x, 1e-12);
      EXPECT_NEAR(f[i].y, start[i].y, 1e-12);
    }
}

TEST(RunTrajectory, Deterministic) {
  const WorldConfig c;
  const InitCondition init{{12.0, 30.0}, 1.45, 250.0};
  EXPECT_EQ(run_trajectory(c, init, 200, 5), run_trajectory(c, init, 200, 5));
}
