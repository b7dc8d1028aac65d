#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace tpnet {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2& operator+=(Vec2 o) noexcept { x += o.x; y += o.y; return *this; }
  constexpr Vec2& operator-=(Vec2 o) noexcept { x -= o.x; y -= o.y; return *this; }
  constexpr Vec2& operator*=(double s) noexcept { x *= s; y *= s; return *this; }

  friend constexpr Vec2 operator+(Vec2 a, Vec2 b) noexcept { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Vec2 operator-(Vec2 a, Vec2 b) noexcept { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Vec2 operator-(Vec2 a) noexcept { return {-a.x, -a.y}; }
  friend constexpr Vec2 operator*(double s, Vec2 a) noexcept { return {s * a.x, s * a.y}; }
  friend constexpr Vec2 operator*(Vec2 a, double s) noexcept { return {s * a.x, s * a.y}; }
  friend constexpr bool operator==(Vec2 a, Vec2 b) noexcept = default;
};

constexpr double dot(Vec2 a, Vec2 b) noexcept { return a.x * b.x + a.y * b.y; }
constexpr double squared_norm(Vec2 a) noexcept { return dot(a, a); }
inline double norm(Vec2 a) noexcept { return std::sqrt(squared_norm(a)); }
constexpr double squared_distance(Vec2 a, Vec2 b) noexcept { return squared_norm(a - b); }
inline bool is_finite(Vec2 a) noexcept { return std::isfinite(a.x) && std::isfinite(a.y); }

/// Unordered collection of particle coordinates for one time step.
using PointSet = std::vector<Vec2>;

/// Axis-aligned rectangle; lo < hi componentwise.
struct Box {
  Vec2 lo{0.0, 0.0};
  Vec2 hi{1.0, 1.0};

  constexpr bool contains(Vec2 p) const noexcept {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
  }
  constexpr bool valid() const noexcept { return lo.x < hi.x && lo.y < hi.y; }
  friend constexpr bool operator==(const Box&, const Box&) noexcept = default;
};

inline constexpr Box unit_box{{0.0, 0.0}, {1.0, 1.0}};

inline PointSet translated(std::span<const Vec2> points, Vec2 offset) {
  PointSet out(points.begin(), points.end());
  for (auto& p : out) p += offset;
  return out;
}

inline bool all_finite(std::span<const Vec2> points) noexcept {
  for (const auto& p : points)
    if (!is_finite(p)) return false;
  return true;
}

}  // namespace tpnet
