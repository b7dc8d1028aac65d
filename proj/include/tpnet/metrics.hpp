#pragma once

// Chamfer-distance family. All distances are squared Euclidean. Nearest
// neighbours are found by exhaustive search; ties go to the lowest index.

#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tpnet/geometry.hpp"

namespace tpnet {

namespace detail {

inline void require_nonempty(std::span<const Vec2> p, std::span<const Vec2> q, const char* who) {
  if (p.empty() || q.empty()) throw std::invalid_argument(std::string(who) + ": point sets must be nonempty");
}

inline void require_same_size(std::span<const Vec2> p, std::span<const Vec2> q, const char* who) {
  require_nonempty(p, q, who);
  if (p.size() != q.size())
    throw std::invalid_argument(std::string(who) + ": point sets differ in size (" + std::to_string(p.size()) +
                                " vs " + std::to_string(q.size()) + ")");
}

/// Index of the point of `set` nearest to `x`, and its squared distance.
inline std::pair<std::size_t, double> nearest(Vec2 x, std::span<const Vec2> set) noexcept {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double d = squared_distance(x, set[i]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return {best, best_d};
}

}  // namespace detail

inline Vec2 centroid(std::span<const Vec2> points) {
  if (points.empty()) throw std::invalid_argument("centroid: empty point set");
  Vec2 sum{};
  for (const auto& p : points) sum += p;
  return (1.0 / static_cast<double>(points.size())) * sum;
}

/// Sum over P of the squared distance to the nearest point of Q, plus the
/// same with the roles swapped.
inline double chamfer(std::span<const Vec2> p, std::span<const Vec2> q) {
  detail::require_nonempty(p, q, "chamfer");
  double forward = 0.0;
  for (const auto& x : p) forward += detail::nearest(x, q).second;
  double backward = 0.0;
  for (const auto& y : q) backward += detail::nearest(y, p).second;
  return forward + backward;
}

/// Chamfer distance averaged over the (equal) point count.
inline double position_error(std::span<const Vec2> p, std::span<const Vec2> q) {
  detail::require_same_size(p, q, "position_error");
  return chamfer(p, q) / static_cast<double>(p.size());
}

/// Position error after moving each set's centroid to the origin.
inline double shape_error(std::span<const Vec2> p, std::span<const Vec2> q) {
  detail::require_same_size(p, q, "shape_error");
  const PointSet pc = translated(p, -centroid(p));
  const PointSet qc = translated(q, -centroid(q));
  return position_error(pc, qc);
}

struct ChamferGradient {
  double value = 0.0;
  PointSet d_p;  // dvalue/dp_i
  PointSet d_q;  // dvalue/dq_j
};

/// Chamfer value and its gradient with respect to every point of both sets.
/// Each point receives 2(x - nn(x)) from its own term and the matching
/// negation through every term where it is somebody's nearest neighbour.
inline ChamferGradient chamfer_with_gradient(std::span<const Vec2> p, std::span<const Vec2> q) {
  detail::require_nonempty(p, q, "chamfer_with_gradient");
  ChamferGradient g;
  g.d_p.assign(p.size(), Vec2{});
  g.d_q.assign(q.size(), Vec2{});
  double forward = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto [j, d] = detail::nearest(p[i], q);
    forward += d;
    const Vec2 diff = 2.0 * (p[i] - q[j]);
    g.d_p[i] += diff;
    g.d_q[j] -= diff;
  }
  double backward = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    const auto [i, d] = detail::nearest(q[j], p);
    backward += d;
    const Vec2 diff = 2.0 * (q[j] - p[i]);
    g.d_q[j] += diff;
    g.d_p[i] -= diff;
  }
  g.value = forward + backward;
  return g;
}

}  // namespace tpnet
