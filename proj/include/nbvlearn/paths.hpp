#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "nbvlearn/grid_world.hpp"

namespace nbvlearn {

/// Per-cell traversability after footprint inflation.
class Traversability {
 public:
  Traversability() = default;
  Traversability(int width, int height) : width_(width), height_(height), ok_(static_cast<std::size_t>(width) * height, 0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool contains(CellIndex c) const { return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_; }
  std::size_t index(CellIndex c) const { return static_cast<std::size_t>(c.y) * width_ + c.x; }
  bool traversable(CellIndex c) const { return contains(c) && ok_[index(c)] != 0; }
  void set(CellIndex c, bool v) { ok_[index(c)] = v ? 1 : 0; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> ok_;
};

/// Marks a cell traversable iff it is free and no blocking cell (occupied,
/// unknown when `unknown_blocks`, or outside the grid) has its center within
/// footprint_radius of the cell center. `exempt`, when given, is traversable
/// whenever it is free: the robot may leave the cell it already occupies.
Traversability inflate_obstacles(const OccupancyGrid& grid, double footprint_radius, bool unknown_blocks,
                                 std::optional<CellIndex> exempt = std::nullopt);

/// Single-source shortest paths over traversable cells. 8-connected, metric
/// step costs (resolution, sqrt(2) * resolution); diagonal moves may not cut
/// a blocked corner.
class DistanceField {
 public:
  static constexpr double kUnreachable = std::numeric_limits<double>::infinity();

  DistanceField(const Traversability& trav, CellIndex source, double resolution);

  CellIndex source() const { return source_; }
  bool reachable(CellIndex c) const;
  double distance(CellIndex c) const;
  /// Cells from the source to `c`, both inclusive. Empty if unreachable.
  std::vector<CellIndex> path_to(CellIndex c) const;
  /// Reachable cells in order of increasing distance (ties by index).
  const std::vector<CellIndex>& reachable_cells() const { return order_; }

 private:
  int width_;
  int height_;
  CellIndex source_;
  std::vector<double> dist_;
  std::vector<std::int32_t> parent_;
  std::vector<CellIndex> order_;
};

/// A* with the octile heuristic over the same move set as DistanceField.
std::optional<std::vector<CellIndex>> astar_path(const Traversability& trav, CellIndex from, CellIndex to,
                                                 double resolution);

}  // namespace nbvlearn
