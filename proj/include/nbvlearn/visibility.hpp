#pragma once

// Exact grid traversal and line-of-sight primitives, in grid units.

#include <cmath>
#include <limits>
#include <numbers>

#include "nbvlearn/grid_world.hpp"
#include "nbvlearn/pose.hpp"

namespace nbvlearn {

/// Visits, in order of increasing distance from p0, every cell whose closed
/// square touches the segment p0 -> p1 (a supercover traversal). When the
/// segment passes exactly through a lattice corner both side cells are
/// visited (x-side first) before the diagonal one. `visit(CellIndex)`
/// returns false to stop early. Returns false iff stopped early.
///
/// Crossing parameters are recomputed from p0 at every step instead of being
/// accumulated, so segments between half-integer points resolve corner ties
/// exactly.
template <class Visit>
bool traverse_segment(Vec2 p0, Vec2 p1, Visit&& visit) {
  int x = static_cast<int>(std::floor(p0.x));
  int y = static_cast<int>(std::floor(p0.y));
  if (!visit(CellIndex{x, y})) return false;
  const double dx = p1.x - p0.x;
  const double dy = p1.y - p0.y;
  const int sx = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
  const int sy = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
  constexpr double inf = std::numeric_limits<double>::infinity();
  int bx = sx > 0 ? x + 1 : x;
  int by = sy > 0 ? y + 1 : y;
  auto t_at_x = [&](int b) { return sx == 0 ? inf : (static_cast<double>(b) - p0.x) / dx; };
  auto t_at_y = [&](int b) { return sy == 0 ? inf : (static_cast<double>(b) - p0.y) / dy; };
  double tx = t_at_x(bx);
  double ty = t_at_y(by);
  while (true) {
    const double t = std::min(tx, ty);
    if (!(t <= 1.0)) return true;
    if (tx < ty) {
      x += sx;
      if (!visit(CellIndex{x, y})) return false;
      bx += sx;
      tx = t_at_x(bx);
    } else if (ty < tx) {
      y += sy;
      if (!visit(CellIndex{x, y})) return false;
      by += sy;
      ty = t_at_y(by);
    } else {
      if (!visit(CellIndex{x + sx, y})) return false;
      if (!visit(CellIndex{x, y + sy})) return false;
      x += sx;
      y += sy;
      if (!visit(CellIndex{x, y})) return false;
      bx += sx;
      by += sy;
      tx = t_at_x(bx);
      ty = t_at_y(by);
    }
  }
}

/// True when every cell touched by the segment from `origin` to the center of
/// `target`, other than `target` itself, is inside the grid and not blocking.
template <class Blocks>
bool line_of_sight(const OccupancyGrid& g, Vec2 origin, CellIndex target, Blocks&& blocks) {
  const Vec2 goal{target.x + 0.5, target.y + 0.5};
  return traverse_segment(origin, goal, [&](CellIndex c) {
    if (c == target) return true;
    if (!g.contains(c)) return false;
    return !blocks(g.at(c));
  });
}

/// Angular tolerance applied at the edges of the field of view and the range
/// disk so that cells lying exactly on a boundary are counted.
inline constexpr double kVisibilityEpsilon = 1e-9;

/// Calls `visit(cell, bearing)` for every in-grid cell whose center lies
/// within `range_cells` of `origin` and within `half_fov` of `yaw` (any
/// bearing when half_fov >= pi), for which `want(state)` holds, and which is
/// in line of sight according to `blocks`.
template <class Want, class Blocks, class Visit>
void for_each_visible_cell(const OccupancyGrid& g, Vec2 origin, double range_cells, double yaw, double half_fov,
                           Want&& want, Blocks&& blocks, Visit&& visit) {
  const bool full_circle = half_fov >= std::numbers::pi;
  const double r2 = range_cells * range_cells + kVisibilityEpsilon;
  const int x0 = std::max(0, static_cast<int>(std::floor(origin.x - range_cells)));
  const int x1 = std::min(g.width() - 1, static_cast<int>(std::floor(origin.x + range_cells)));
  const int y0 = std::max(0, static_cast<int>(std::floor(origin.y - range_cells)));
  const int y1 = std::min(g.height() - 1, static_cast<int>(std::floor(origin.y + range_cells)));
  for (int y = y0; y <= y1; ++y) {
    const double cy = y + 0.5 - origin.y;
    for (int x = x0; x <= x1; ++x) {
      const double cx = x + 0.5 - origin.x;
      if (cx * cx + cy * cy > r2) continue;
      if (!want(g.at(x, y))) continue;
      const double bearing = std::atan2(cy, cx);
      if (!full_circle && std::abs(angle_diff(bearing, yaw)) > half_fov + kVisibilityEpsilon) continue;
      if (!line_of_sight(g, origin, CellIndex{x, y}, blocks)) continue;
      visit(CellIndex{x, y}, bearing);
    }
  }
}

}  // namespace nbvlearn
