#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "nbvlearn/pose.hpp"
#include "nbvlearn/rng.hpp"

namespace nbvlearn {

enum class VoxelState : std::uint8_t { free = 0, occupied = 1, unknown = 2 };

/// Rank used when pooling cells: occupied > unknown > free.
constexpr int pooling_priority(VoxelState s) {
  switch (s) {
    case VoxelState::occupied: return 2;
    case VoxelState::unknown: return 1;
    case VoxelState::free: return 0;
  }
  return 0;
}

struct CellIndex {
  int x = 0;
  int y = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
  friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

/// Row-major 2D grid of voxel states with a metric frame.
///
/// Cell (x, y) covers [origin + x*res, origin + (x+1)*res) along each axis.
/// Geometry that has to be exact (ray traversal, line of sight) is done in
/// "grid units", where a cell is the unit square [x, x+1) x [y, y+1).
class OccupancyGrid {
 public:
  OccupancyGrid() = default;
  OccupancyGrid(int width, int height, double resolution, Vec2 origin = {},
                VoxelState fill = VoxelState::unknown);

  int width() const { return width_; }
  int height() const { return height_; }
  double resolution() const { return resolution_; }
  Vec2 origin() const { return origin_; }
  std::size_t size() const { return cells_.size(); }

  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }
  bool contains(CellIndex c) const { return contains(c.x, c.y); }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }
  CellIndex cell_at_index(std::size_t i) const {
    return {static_cast<int>(i % static_cast<std::size_t>(width_)),
            static_cast<int>(i / static_cast<std::size_t>(width_))};
  }

  VoxelState at(int x, int y) const { return cells_[index(x, y)]; }
  VoxelState at(CellIndex c) const { return at(c.x, c.y); }
  /// Out-of-bounds lookups return `outside`.
  VoxelState at_or(int x, int y, VoxelState outside) const {
    return contains(x, y) ? at(x, y) : outside;
  }
  void set(int x, int y, VoxelState s) { cells_[index(x, y)] = s; }
  void set(CellIndex c, VoxelState s) { set(c.x, c.y, s); }
  void fill(VoxelState s);

  std::span<const VoxelState> cells() const { return cells_; }
  std::span<VoxelState> cells() { return cells_; }

  /// World point to continuous grid units.
  Vec2 to_grid(Vec2 world) const {
    return {(world.x - origin_.x) / resolution_, (world.y - origin_.y) / resolution_};
  }
  Vec2 to_world(Vec2 grid) const {
    return {origin_.x + grid.x * resolution_, origin_.y + grid.y * resolution_};
  }
  CellIndex cell_of(Vec2 world) const;
  Vec2 cell_center(CellIndex c) const { return to_world({c.x + 0.5, c.y + 0.5}); }

  std::size_t count(VoxelState s) const;

  friend bool operator==(const OccupancyGrid&, const OccupancyGrid&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  double resolution_ = 1.0;
  Vec2 origin_{};
  std::vector<VoxelState> cells_;
};

enum class WorldKind : std::uint8_t { maze = 0, cluttered = 1 };

struct WorldGenParams {
  std::uint64_t seed = 0;
  WorldKind kind = WorldKind::maze;
  double side_length_m = 20.0;
  double resolution = 0.2;
  // maze
  double corridor_width_m = 2.0;
  double wall_thickness_m = 0.4;
  /// Fraction of interior lattice walls knocked out after carving, adds loops.
  double loop_fraction = 0.1;
  // cluttered
  /// Unset: drawn uniformly from [5, 15].
  std::optional<int> obstacle_count;
  double obstacle_size_min_m = 1.0;
  double obstacle_size_max_m = 4.0;
  /// Cleared of obstacles (cluttered) or validated free (maze) when set.
  std::optional<Pose> start_pose;
};

/// Recursive-backtracker maze on a coarse lattice with corridors of
/// corridor_width_m. Deterministic in params.seed.
OccupancyGrid generate_maze(const WorldGenParams& params);

/// Boundary-closed open area with rotated rectangles and ellipses, rejected
/// and redrawn whenever they would split the free space.
OccupancyGrid generate_cluttered(const WorldGenParams& params);

/// Dispatches on params.kind.
OccupancyGrid generate_world(const WorldGenParams& params);

/// Random free cell center whose disk of `clearance_m` is free as well.
Pose pick_start_pose(const OccupancyGrid& grid, double clearance_m, Rng& rng);

/// Number of 4-connected components formed by cells in state `s`.
int count_components(const OccupancyGrid& grid, VoxelState s);

constexpr std::uint8_t kWorldFileVersion = 1;

void save_world(const OccupancyGrid& grid, const std::filesystem::path& path);
OccupancyGrid load_world(const std::filesystem::path& path);

}  // namespace nbvlearn
