#pragma once

#include <memory>
#include <numbers>
#include <optional>
#include <vector>

#include "nbvlearn/grid_world.hpp"
#include "nbvlearn/pose.hpp"

namespace nbvlearn {

struct RobotModel {
  double v_max = 1.0;             ///< m/s
  double omega_max = 1.0;         ///< rad/s
  double footprint_radius = 0.2;  ///< m
  void validate() const;
};

enum class SensingMode : std::uint8_t {
  /// Every cell in range and field of view with a clear line of sight to its
  /// center is observed. Shares its visibility test with the gain.
  exact,
  /// rays_per_scan rays fanned across the field of view.
  rays,
};

struct SensorModel {
  double fov = std::numbers::pi / 2.0;  ///< rad
  double range = 5.0;                   ///< m
  int rays_per_scan = 180;
  SensingMode mode = SensingMode::exact;
  void validate() const;
  double range_cells(double resolution) const { return range / resolution; }
};

/// How translation and rotation times combine.
enum class TimeModel : std::uint8_t { simultaneous, sequential };

enum class RayBlocking : std::uint8_t { occupied, occupied_or_unknown };

struct RayResult {
  std::vector<CellIndex> cells;  ///< traversed cells in order, including the hit cell
  std::optional<CellIndex> hit;
};

/// Exact supercover ray traversal from a world point. Stops at the first
/// blocking cell, at the grid border or once the entry distance exceeds
/// max_range. Throws ParameterError if origin is outside the grid.
RayResult raycast(const OccupancyGrid& grid, Vec2 origin, double angle, double max_range,
                  RayBlocking blocking = RayBlocking::occupied);

/// max(path/v_max, |dyaw|/omega_max), or the sum for TimeModel::sequential.
double traversal_time(double path_length, double delta_yaw, const RobotModel& robot,
                      TimeModel model = TimeModel::simultaneous);

/// Belief window of fixed size, world-aligned and centered on the robot cell.
struct LocalMap {
  OccupancyGrid cells;       ///< origin = world coordinates of the window corner
  double robot_yaw = 0.0;
  CellIndex offset;          ///< global index of local cell (0, 0)

  int size() const { return cells.width(); }
  CellIndex robot_cell() const { return {size() / 2, size() / 2}; }
  /// Robot position in grid units of the window.
  Vec2 robot_grid() const { return {size() / 2 + 0.5, size() / 2 + 0.5}; }
  CellIndex to_global(CellIndex local) const { return {local.x + offset.x, local.y + offset.y}; }
  CellIndex to_local(CellIndex global) const { return {global.x - offset.x, global.y - offset.y}; }
  /// Metric extent of the window side.
  double extent() const { return size() * cells.resolution(); }
};

inline constexpr int kLocalMapSize = 50;

/// Cells outside `belief` are reported occupied.
LocalMap extract_local_map(const OccupancyGrid& belief, const Pose& robot, int size = kLocalMapSize);

struct SimState {
  std::shared_ptr<const OccupancyGrid> ground_truth;
  OccupancyGrid belief;
  Pose robot;
  double elapsed_time = 0.0;
  double distance_traveled = 0.0;
  RobotModel robot_model;
  SensorModel sensor;
  TimeModel time_model = TimeModel::simultaneous;
};

/// Fresh state with an all-unknown belief; does not sense.
SimState make_sim_state(std::shared_ptr<const OccupancyGrid> ground_truth, const Pose& start,
                        const RobotModel& robot = {}, const SensorModel& sensor = {});

/// Observes the world from the current pose and returns the cells whose
/// belief changed from unknown. Throws SimulationError if the robot stands in
/// an occupied ground-truth cell.
std::vector<CellIndex> sense(SimState& state);

struct StepResult {
  double path_length = 0.0;
  double duration = 0.0;
  std::vector<CellIndex> newly_observed;
};

/// Moves the robot along `path` (global cells, robot cell first, target cell
/// last), accounts time and distance, then senses at the target. Throws
/// PlanningError if the path leaves free belief space or does not end at the
/// target.
StepResult step(SimState& state, const Pose& target, const std::vector<CellIndex>& path);

/// Metric length of a cell path with 8-connected moves.
double path_length(const std::vector<CellIndex>& path, double resolution);

/// Cells observable from some pose the robot can reach from `start`, with
/// reachability over ground-truth free cells inflated by the robot footprint.
/// Returned as a mask over the grid.
std::vector<std::uint8_t> observable_cells(const OccupancyGrid& ground_truth, const Pose& start,
                                           const RobotModel& robot, const SensorModel& sensor);

}  // namespace nbvlearn
