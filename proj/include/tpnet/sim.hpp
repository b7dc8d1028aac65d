#pragma once

// 2D mass-spring soft body: a ring of particles joined by damped Hookean
// springs, bouncing inside an axis-aligned box under gravity.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tpnet/geometry.hpp"

namespace tpnet {

struct WorldConfig {
  std::size_t n = 30;
  double radius = 2.0;
  Vec2 gravity{0.0, -0.5};
  double wall_restitution = 1.0;
  double particle_restitution = 0.0;
  double friction = 1.0;
  double spring_frequency_hz = 1.0;
  double spring_damping_ratio = 0.0;
  double dt = 1.0 / 60.0;
  int substeps = 8;
  Vec2 box_min{0.0, 0.0};
  Vec2 box_max{45.0, 45.0};
  double particle_mass = 1.0;
  // Uniform launch speed per unit of initial force magnitude.
  double velocity_scale = 10.0;
  // Normal approach speeds below this are absorbed instead of reflected, so
  // resting contact stays at rest.
  double restitution_threshold = 0.1;

  Box box() const noexcept { return {box_min, box_max}; }

  double spring_stiffness() const noexcept {
    const double omega = 2.0 * std::numbers::pi * spring_frequency_hz;
    return particle_mass * omega * omega;
  }
  double spring_damping() const noexcept {
    const double omega = 2.0 * std::numbers::pi * spring_frequency_hz;
    return 2.0 * particle_mass * spring_damping_ratio * omega;
  }
  // Box2D mixing rules: restitution takes the max, friction the geometric mean
  // of two equal coefficients (i.e. the coefficient itself).
  double effective_restitution() const noexcept {
    return std::max(wall_restitution, particle_restitution);
  }

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("WorldConfig: " + what); };
    if (n < 3) fail("n must be at least 3");
    if (!(radius > 0.0)) fail("radius must be positive");
    if (!box().valid()) fail("box_min must be < box_max componentwise");
    if (!(wall_restitution >= 0.0 && wall_restitution <= 1.0)) fail("wall_restitution must be in [0,1]");
    if (!(particle_restitution >= 0.0 && particle_restitution <= 1.0))
      fail("particle_restitution must be in [0,1]");
    if (!(friction >= 0.0)) fail("friction must be >= 0");
    if (!(spring_frequency_hz > 0.0)) fail("spring_frequency_hz must be > 0");
    if (!(spring_damping_ratio >= 0.0)) fail("spring_damping_ratio must be >= 0");
    if (!(dt > 0.0)) fail("dt must be > 0");
    if (substeps < 1) fail("substeps must be >= 1");
    if (!(particle_mass > 0.0)) fail("particle_mass must be > 0");
    if (!is_finite(gravity)) fail("gravity must be finite");
    if (!(restitution_threshold >= 0.0)) fail("restitution_threshold must be >= 0");
  }

  friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

struct Spring {
  std::size_t i = 0;
  std::size_t j = 0;
  double rest_length = 0.0;
  double stiffness = 0.0;
  double damping_coeff = 0.0;

  friend bool operator==(const Spring&, const Spring&) = default;
};

struct InitCondition {
  Vec2 center{22.5, 22.5};
  double force_magnitude = 1.0;
  double direction_deg = 180.0;

  friend bool operator==(const InitCondition&, const InitCondition&) = default;
};

struct SoftBodyState {
  std::vector<Vec2> positions;
  std::vector<Vec2> velocities;
  std::vector<Spring> springs;
  bool contact = false;
};

struct TrajectoryMeta {
  static constexpr int kFormatVersion = 1;

  WorldConfig config;
  InitCondition init;
  std::uint64_t seed = 0;
  int format_version = kFormatVersion;

  friend bool operator==(const TrajectoryMeta&, const TrajectoryMeta&) = default;
};

struct Trajectory {
  TrajectoryMeta meta;
  std::vector<PointSet> frames;
  std::vector<bool> contact;

  std::size_t size() const noexcept { return frames.size(); }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

class SimulationDivergence : public std::runtime_error {
 public:
  SimulationDivergence(std::size_t step, const std::string& detail)
      : std::runtime_error("simulation diverged at step " + std::to_string(step) + ": " + detail +
                           " (dt too large?)"),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Cyclic index distance on a ring of n particles.
constexpr std::size_t ring_distance(std::size_t i, std::size_t j, std::size_t n) noexcept {
  const std::size_t d = i > j ? i - j : j - i;
  return std::min(d, n - d);
}

/// Spring rule: connect pairs whose ring distance d satisfies 1 <= d < 2n/5.
constexpr bool springs_connect(std::size_t i, std::size_t j, std::size_t n) noexcept {
  const std::size_t d = ring_distance(i, j, n);
  return d >= 1 && 5 * d < 2 * n;
}

/// Every particle receives velocity_scale * magnitude * (cos, sin)(direction).
inline SoftBodyState apply_initial_impulse(SoftBodyState state, const InitCondition& init, double velocity_scale) {
  const double theta = init.direction_deg * std::numbers::pi / 180.0;
  const double speed = velocity_scale * init.force_magnitude;
  const Vec2 v{speed * std::cos(theta), speed * std::sin(theta)};
  std::fill(state.velocities.begin(), state.velocities.end(), v);
  return state;
}

inline SoftBodyState build_soft_body(const WorldConfig& config, const InitCondition& init) {
  config.validate();
  const Vec2 c = init.center;
  const double r = config.radius;
  if (c.x - r < config.box_min.x || c.x + r > config.box_max.x || c.y - r < config.box_min.y ||
      c.y + r > config.box_max.y)
    throw std::invalid_argument("build_soft_body: body circle extends outside the world box");

  const std::size_t n = config.n;
  SoftBodyState state;
  state.positions.resize(n);
  state.velocities.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    state.positions[i] = {c.x + r * std::cos(a), c.y + r * std::sin(a)};
  }
  const double k = config.spring_stiffness();
  const double damping = config.spring_damping();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (springs_connect(i, j, n))
        state.springs.push_back({i, j, norm(state.positions[j] - state.positions[i]), k, damping});

  return apply_initial_impulse(std::move(state), init, config.velocity_scale);
}

/// Force exerted on particle s.i by spring s; particle s.j receives the negation.
inline Vec2 spring_force(const Spring& s, std::span<const Vec2> positions, std::span<const Vec2> velocities) {
  const Vec2 delta = positions[s.j] - positions[s.i];
  const double len = norm(delta);
  if (len == 0.0) return {};
  const Vec2 axis = (1.0 / len) * delta;
  const double rel_speed = dot(velocities[s.j] - velocities[s.i], axis);
  return (s.stiffness * (len - s.rest_length) + s.damping_coeff * rel_speed) * axis;
}

/// Adds gravity and spring forces into `forces` (resized to n).
inline void accumulate_forces(const SoftBodyState& state, const WorldConfig& config, std::vector<Vec2>& forces) {
  const std::size_t n = state.positions.size();
  forces.assign(n, config.particle_mass * config.gravity);
  for (const auto& s : state.springs) {
    const Vec2 f = spring_force(s, state.positions, state.velocities);
    forces[s.i] += f;
    forces[s.j] -= f;
  }
}

namespace detail {

// Clamps one coordinate into [lo, hi]; returns true on contact.
inline bool resolve_axis(double& x, double& v, double& v_tangent, double lo, double hi, double restitution,
                         double threshold, double friction_decay) {
  bool hit = false;
  if (x < lo) {
    x = lo;
    if (v < 0.0) v = (-v > threshold) ? -restitution * v : 0.0;
    hit = true;
  } else if (x > hi) {
    x = hi;
    if (v > 0.0) v = (v > threshold) ? -restitution * v : 0.0;
    hit = true;
  }
  if (hit) v_tangent *= friction_decay;
  return hit;
}

}  // namespace detail

/// Advances one frame of duration dt in place. Throws SimulationDivergence
/// (tagged with `step_index`) if the state becomes non-finite.
inline void advance(SoftBodyState& state, const WorldConfig& config, std::size_t step_index = 0) {
  const double h = config.dt / static_cast<double>(config.substeps);
  const double inv_mass = 1.0 / config.particle_mass;
  const double restitution = config.effective_restitution();
  const double friction_decay = 1.0 / (1.0 + config.friction * h);
  const std::size_t n = state.positions.size();
  std::vector<Vec2> forces;
  state.contact = false;

  for (int sub = 0; sub < config.substeps; ++sub) {
    accumulate_forces(state, config, forces);
    for (std::size_t p = 0; p < n; ++p) {
      Vec2& v = state.velocities[p];
      Vec2& x = state.positions[p];
      v += (h * inv_mass) * forces[p];
      x += h * v;
      const bool hx = detail::resolve_axis(x.x, v.x, v.y, config.box_min.x, config.box_max.x, restitution,
                                           config.restitution_threshold, friction_decay);
      const bool hy = detail::resolve_axis(x.y, v.y, v.x, config.box_min.y, config.box_max.y, restitution,
                                           config.restitution_threshold, friction_decay);
      state.contact = state.contact || hx || hy;
      if (!is_finite(x) || !is_finite(v))
        throw SimulationDivergence(step_index, "particle " + std::to_string(p) + " became non-finite");
    }
  }
}

inline SoftBodyState step(SoftBodyState state, const WorldConfig& config) {
  advance(state, config);
  return state;
}

/// Simulates `steps` frames after the initial launch. The physics is fully
/// deterministic; `seed` is recorded in the metadata for provenance.
inline Trajectory run_trajectory(const WorldConfig& config, const InitCondition& init, std::size_t steps,
                                 std::uint64_t seed) {
  if (steps == 0) throw std::invalid_argument("run_trajectory: steps must be positive");
  SoftBodyState state = build_soft_body(config, init);
  Trajectory traj;
  traj.meta = {config, init, seed, TrajectoryMeta::kFormatVersion};
  traj.frames.reserve(steps);
  traj.contact.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    advance(state, config, t);
    traj.frames.push_back(state.positions);
    traj.contact.push_back(state.contact);
  }
  return traj;
}

}  // namespace tpnet
