#pragma once

// Corpus construction: initial-condition grids, seeded trajectory corpora,
// windowed training samples, normalization, point orderings and contour
// resampling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "tpnet/geometry.hpp"
#include "tpnet/random.hpp"
#include "tpnet/sim.hpp"

namespace tpnet {

// ---------------------------------------------------------------------------
// Initial-condition grid

/// Discrete launch grid. Centers lie on a lattice spanning
/// [center_min, center_max]^2 with `center_steps` points per axis; the grid is
/// the cartesian product of centers, magnitudes and directions.
struct InitGrid {
  double center_min = 2.9;
  double center_max = 42.1;
  std::size_t center_steps = 15;
  std::vector<double> magnitudes{1.0, 1.15, 1.3, 1.45, 1.6};
  std::vector<double> directions_deg = [] {
    std::vector<double> d;
    for (int a = 180; a <= 270; a += 5) d.push_back(a);
    return d;
  }();

  static InitGrid paper() { return {}; }

  std::size_t size() const noexcept {
    return center_steps * center_steps * magnitudes.size() * directions_deg.size();
  }

  InitCondition at(std::size_t index) const {
    if (index >= size()) throw std::out_of_range("InitGrid::at: index out of range");
    const std::size_t nd = directions_deg.size();
    const std::size_t nm = magnitudes.size();
    const std::size_t dir = index % nd;
    index /= nd;
    const std::size_t mag = index % nm;
    index /= nm;
    const std::size_t cy = index % center_steps;
    const std::size_t cx = index / center_steps;
    auto lattice = [&](std::size_t i) {
      if (center_steps == 1) return 0.5 * (center_min + center_max);
      return center_min + (center_max - center_min) * static_cast<double>(i) / static_cast<double>(center_steps - 1);
    };
    return {{lattice(cx), lattice(cy)}, magnitudes[mag], directions_deg[dir]};
  }
};

/// Seeded permutation of all grid indices. Corpora take consecutive slices of
/// it, so slices at different offsets never share an initial condition.
inline std::vector<std::size_t> grid_order(const InitGrid& grid, std::uint64_t master_seed) {
  std::vector<std::size_t> order(grid.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(master_seed));
  seeded_shuffle(order, rng);
  return order;
}

class CorpusGenerationError : public std::runtime_error {
 public:
  CorpusGenerationError(std::size_t trajectory, const InitCondition& init, const std::string& detail)
      : std::runtime_error("trajectory " + std::to_string(trajectory) + " (center=(" +
                           std::to_string(init.center.x) + "," + std::to_string(init.center.y) +
                           "), magnitude=" + std::to_string(init.force_magnitude) +
                           ", direction=" + std::to_string(init.direction_deg) + "deg): " + detail),
        trajectory_(trajectory),
        init_(init) {}
  std::size_t trajectory() const noexcept { return trajectory_; }
  const InitCondition& init() const noexcept { return init_; }

 private:
  std::size_t trajectory_;
  InitCondition init_;
};

/// Generates `count` trajectories from grid points [offset, offset + count)
/// of the seeded grid permutation. `jobs` > 1 fans out across threads; the
/// result does not depend on it.
inline std::vector<Trajectory> generate_corpus(const WorldConfig& config, const InitGrid& grid, std::size_t count,
                                               std::size_t steps, std::uint64_t master_seed,
                                               std::size_t offset = 0, unsigned jobs = 1) {
  if (count == 0) throw std::invalid_argument("generate_corpus: count must be >= 1");
  if (steps == 0) throw std::invalid_argument("generate_corpus: steps must be >= 1");
  if (offset + count > grid.size())
    throw std::invalid_argument("generate_corpus: requested " + std::to_string(offset + count) +
                                " grid points but the grid has " + std::to_string(grid.size()));
  config.validate();
  const auto order = grid_order(grid, master_seed);
  std::vector<Trajectory> out(count);

  auto run_one = [&](std::size_t i) {
    const InitCondition init = grid.at(order[offset + i]);
    try {
      out[i] = run_trajectory(config, init, steps, derive_seed(master_seed, offset + i));
    } catch (const SimulationDivergence& e) {
      throw CorpusGenerationError(offset + i, init, e.what());
    }
  };

  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(count)));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) run_one(i);
    return out;
  }
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += jobs) {
        try {
          run_one(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

struct NormalizeResult {
  PointSet points;
  std::size_t out_of_range = 0;  // points that landed outside [0,1]^2
};

inline NormalizeResult normalize(std::span<const Vec2> points, Vec2 box_min, Vec2 box_max) {
  if (!(box_min.x < box_max.x && box_min.y < box_max.y))
    throw std::invalid_argument("normalize: box_min must be < box_max");
  const double sx = box_max.x - box_min.x;
  const double sy = box_max.y - box_min.y;
  NormalizeResult r;
  r.points.reserve(points.size());
  for (const auto& p : points) {
    const Vec2 q{(p.x - box_min.x) / sx, (p.y - box_min.y) / sy};
    if (!unit_box.contains(q)) ++r.out_of_range;
    r.points.push_back(q);
  }
  return r;
}

inline PointSet denormalize(std::span<const Vec2> points, Vec2 box_min, Vec2 box_max) {
  if (!(box_min.x < box_max.x && box_min.y < box_max.y))
    throw std::invalid_argument("denormalize: box_min must be < box_max");
  const double sx = box_max.x - box_min.x;
  const double sy = box_max.y - box_min.y;
  PointSet out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back({box_min.x + p.x * sx, box_min.y + p.y * sy});
  return out;
}

// ---------------------------------------------------------------------------
// Training samples

inline constexpr std::size_t kRolloutHorizon = 8;

struct TrainSample {
  std::vector<PointSet> inputs;   // m frames, normalized
  std::vector<PointSet> targets;  // horizon frames, normalized
  std::size_t trajectory_id = 0;
  std::size_t start = 0;
};

struct SubsequenceSpec {
  std::size_t m = 5;
  std::size_t horizon = kRolloutHorizon;
  std::size_t n_collision = 15;
  std::size_t n_normal = 5;

  std::size_t window() const noexcept { return m + horizon; }
};

struct SampleSet {
  std::vector<TrainSample> samples;  // collision windows first, then normal ones
  std::size_t collision_count = 0;
  std::size_t normal_count = 0;
  std::size_t collision_shortfall = 0;
  std::size_t normal_shortfall = 0;
};

/// True iff frames [start, start + length) contain a contact frame.
inline bool window_has_contact(const std::vector<bool>& contact, std::size_t start, std::size_t length) {
  for (std::size_t t = start; t < start + length; ++t)
    if (contact[t]) return true;
  return false;
}

inline TrainSample make_sample(const Trajectory& traj, std::size_t trajectory_id, std::size_t start,
                               std::size_t m, std::size_t horizon) {
  const auto& cfg = traj.meta.config;
  TrainSample s;
  s.trajectory_id = trajectory_id;
  s.start = start;
  for (std::size_t t = 0; t < m; ++t)
    s.inputs.push_back(normalize(traj.frames[start + t], cfg.box_min, cfg.box_max).points);
  for (std::size_t t = 0; t < horizon; ++t)
    s.targets.push_back(normalize(traj.frames[start + m + t], cfg.box_min, cfg.box_max).points);
  return s;
}

/// Draws windows of length m + horizon, without replacement, among start
/// indices that do (collision) or do not (normal) overlap a contact frame.
inline SampleSet sample_subsequences(const Trajectory& traj, std::size_t trajectory_id, const SubsequenceSpec& spec,
                                     std::uint64_t seed) {
  if (spec.m < 1) throw std::invalid_argument("sample_subsequences: m must be >= 1");
  SampleSet out;
  const std::size_t len = spec.window();
  if (traj.size() < len) {
    out.collision_shortfall = spec.n_collision;
    out.normal_shortfall = spec.n_normal;
    return out;
  }
  std::vector<std::size_t> collision, normal;
  for (std::size_t s = 0; s + len <= traj.size(); ++s)
    (window_has_contact(traj.contact, s, len) ? collision : normal).push_back(s);

  std::mt19937_64 rng(mix_seed(seed));
  auto draw = [&](std::vector<std::size_t>& pool, std::size_t want, std::size_t& taken, std::size_t& shortfall) {
    seeded_shuffle(pool, rng);
    taken = std::min(want, pool.size());
    shortfall = want - taken;
    for (std::size_t i = 0; i < taken; ++i)
      out.samples.push_back(make_sample(traj, trajectory_id, pool[i], spec.m, spec.horizon));
  };
  draw(collision, spec.n_collision, out.collision_count, out.collision_shortfall);
  draw(normal, spec.n_normal, out.normal_count, out.normal_shortfall);
  return out;
}

// ---------------------------------------------------------------------------
// Point orderings

struct OrderingMethod {
  enum class Kind { identity, ascending_x, descending_y, random_shuffle };
  Kind kind = Kind::identity;
  std::uint64_t seed = 0;  // random_shuffle only

  static OrderingMethod identity() { return {Kind::identity, 0}; }
  static OrderingMethod ascending_x() { return {Kind::ascending_x, 0}; }
  static OrderingMethod descending_y() { return {Kind::descending_y, 0}; }
  static OrderingMethod shuffle(std::uint64_t seed) { return {Kind::random_shuffle, seed}; }

  /// Same method with the shuffle seed re-derived for a sub-stream.
  OrderingMethod child(std::uint64_t index) const { return {kind, derive_seed(seed, index)}; }
};

inline const char* to_string(OrderingMethod::Kind k) {
  switch (k) {
    case OrderingMethod::Kind::identity: return "identity";
    case OrderingMethod::Kind::ascending_x: return "asc-x";
    case OrderingMethod::Kind::descending_y: return "desc-y";
    case OrderingMethod::Kind::random_shuffle: return "shuffle";
  }
  return "?";
}

inline OrderingMethod::Kind parse_ordering(const std::string& s) {
  if (s == "identity") return OrderingMethod::Kind::identity;
  if (s == "asc-x" || s == "ascending_x") return OrderingMethod::Kind::ascending_x;
  if (s == "desc-y" || s == "descending_y") return OrderingMethod::Kind::descending_y;
  if (s == "shuffle" || s == "random_shuffle") return OrderingMethod::Kind::random_shuffle;
  throw std::invalid_argument("unknown ordering '" + s + "'");
}

inline PointSet apply_ordering(std::span<const Vec2> points, const OrderingMethod& method) {
  PointSet out(points.begin(), points.end());
  switch (method.kind) {
    case OrderingMethod::Kind::identity:
      break;
    case OrderingMethod::Kind::ascending_x:
      std::stable_sort(out.begin(), out.end(),
                       [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
      break;
    case OrderingMethod::Kind::descending_y:
      std::stable_sort(out.begin(), out.end(),
                       [](Vec2 a, Vec2 b) { return a.y > b.y || (a.y == b.y && a.x < b.x); });
      break;
    case OrderingMethod::Kind::random_shuffle: {
      std::mt19937_64 rng(mix_seed(method.seed));
      seeded_shuffle(out, rng);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Contour resampling

/// n points at equal arc-length spacing along the closed polyline, starting
/// at vertex 0.
inline PointSet resample_contour(std::span<const Vec2> polygon, std::size_t n) {
  if (polygon.size() < 3) throw std::invalid_argument("resample_contour: polygon needs at least 3 vertices");
  if (n == 0) throw std::invalid_argument("resample_contour: n must be positive");
  const std::size_t v = polygon.size();
  std::vector<double> cumulative(v + 1, 0.0);
  for (std::size_t i = 0; i < v; ++i)
    cumulative[i + 1] = cumulative[i] + norm(polygon[(i + 1) % v] - polygon[i]);
  const double perimeter = cumulative[v];
  if (!(perimeter > 0.0) || !std::isfinite(perimeter))
    throw std::invalid_argument("resample_contour: degenerate polygon (zero perimeter)");

  PointSet out;
  out.reserve(n);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double s = perimeter * static_cast<double>(k) / static_cast<double>(n);
    while (seg + 1 < v && cumulative[seg + 1] <= s) ++seg;
    const double seg_len = cumulative[seg + 1] - cumulative[seg];
    const double t = seg_len > 0.0 ? (s - cumulative[seg]) / seg_len : 0.0;
    const Vec2 a = polygon[seg];
    const Vec2 b = polygon[(seg + 1) % v];
    out.push_back(a + t * (b - a));
  }
  return out;
}

}  // namespace tpnet
