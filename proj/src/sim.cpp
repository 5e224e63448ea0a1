#include "nbvlearn/sim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nbvlearn/errors.hpp"
#include "nbvlearn/paths.hpp"
#include "nbvlearn/visibility.hpp"

namespace nbvlearn {

void RobotModel::validate() const {
  if (!(v_max > 0.0) || !(omega_max > 0.0) || !(footprint_radius > 0.0))
    throw ParameterError("robot model values must be strictly positive");
}

void SensorModel::validate() const {
  if (!(fov > 0.0) || fov > 2.0 * std::numbers::pi + 1e-12) throw ParameterError("sensor fov must be in (0, 2*pi]");
  if (!(range > 0.0)) throw ParameterError("sensor range must be > 0");
  if (rays_per_scan < 2) throw ParameterError("rays_per_scan must be >= 2");
}

RayResult raycast(const OccupancyGrid& grid, Vec2 origin, double angle, double max_range, RayBlocking blocking) {
  const Vec2 p0 = grid.to_grid(origin);
  if (!grid.contains(static_cast<int>(std::floor(p0.x)), static_cast<int>(std::floor(p0.y))))
    throw ParameterError("ray origin outside the grid");
  if (!(max_range >= 0.0)) throw ParameterError("max_range must be non-negative");
  const double len = max_range / grid.resolution();
  const Vec2 p1{p0.x + len * std::cos(angle), p0.y + len * std::sin(angle)};
  RayResult out;
  traverse_segment(p0, p1, [&](CellIndex c) {
    if (!grid.contains(c)) return false;
    out.cells.push_back(c);
    const VoxelState s = grid.at(c);
    const bool blocks = s == VoxelState::occupied ||
                        (blocking == RayBlocking::occupied_or_unknown && s == VoxelState::unknown);
    if (blocks) {
      out.hit = c;
      return false;
    }
    return true;
  });
  return out;
}

double traversal_time(double path_length, double delta_yaw, const RobotModel& robot, TimeModel model) {
  if (path_length < 0.0) throw ParameterError("path_length must be non-negative");
  const double t_lin = path_length / robot.v_max;
  const double t_rot = std::abs(delta_yaw) / robot.omega_max;
  return model == TimeModel::simultaneous ? std::max(t_lin, t_rot) : t_lin + t_rot;
}

LocalMap extract_local_map(const OccupancyGrid& belief, const Pose& robot, int size) {
  if (size <= 0) throw ParameterError("local map size must be positive");
  const CellIndex rc = belief.cell_of(robot.position());
  const CellIndex offset{rc.x - size / 2, rc.y - size / 2};
  LocalMap m;
  m.cells = OccupancyGrid(size, size, belief.resolution(),
                          belief.to_world({static_cast<double>(offset.x), static_cast<double>(offset.y)}),
                          VoxelState::occupied);
  m.robot_yaw = robot.yaw;
  m.offset = offset;
  for (int y = 0; y < size; ++y) {
    const int gy = y + offset.y;
    if (gy < 0 || gy >= belief.height()) continue;
    for (int x = 0; x < size; ++x) {
      const int gx = x + offset.x;
      if (gx < 0 || gx >= belief.width()) continue;
      m.cells.set(x, y, belief.at(gx, gy));
    }
  }
  return m;
}

SimState make_sim_state(std::shared_ptr<const OccupancyGrid> ground_truth, const Pose& start, const RobotModel& robot,
                        const SensorModel& sensor) {
  if (!ground_truth) throw ParameterError("ground truth grid required");
  robot.validate();
  sensor.validate();
  SimState s;
  s.belief = OccupancyGrid(ground_truth->width(), ground_truth->height(), ground_truth->resolution(),
                           ground_truth->origin(), VoxelState::unknown);
  s.ground_truth = std::move(ground_truth);
  s.robot = start;
  s.robot_model = robot;
  s.sensor = sensor;
  return s;
}

std::vector<CellIndex> sense(SimState& state) {
  const OccupancyGrid& gt = *state.ground_truth;
  OccupancyGrid& belief = state.belief;
  const CellIndex rc = gt.cell_of(state.robot.position());
  if (!gt.contains(rc) || gt.at(rc) != VoxelState::free)
    throw SimulationError("robot pose is not in free ground-truth space");

  std::vector<CellIndex> fresh;
  auto observe = [&](CellIndex c) {
    if (belief.at(c) != VoxelState::unknown) return;
    belief.set(c, gt.at(c));
    fresh.push_back(c);
  };
  observe(rc);

  const Vec2 origin = gt.to_grid(state.robot.position());
  const double range = state.sensor.range_cells(gt.resolution());
  const double half_fov = 0.5 * state.sensor.fov;
  if (state.sensor.mode == SensingMode::exact) {
    for_each_visible_cell(
        gt, origin, range, state.robot.yaw, half_fov, [](VoxelState) { return true; },
        [](VoxelState s) { return s == VoxelState::occupied; }, [&](CellIndex c, double) { observe(c); });
    return fresh;
  }

  const double r2 = range * range + kVisibilityEpsilon;
  const bool full_circle = half_fov >= std::numbers::pi;
  const int n = state.sensor.rays_per_scan;
  for (int i = 0; i < n; ++i) {
    const double a = full_circle ? state.robot.yaw + 2.0 * std::numbers::pi * i / n
                                 : state.robot.yaw - half_fov + state.sensor.fov * i / (n - 1);
    const auto ray = raycast(gt, state.robot.position(), a, state.sensor.range);
    for (const auto& c : ray.cells) {
      const double dx = c.x + 0.5 - origin.x, dy = c.y + 0.5 - origin.y;
      if (dx * dx + dy * dy > r2) continue;
      if (!full_circle && std::abs(angle_diff(std::atan2(dy, dx), state.robot.yaw)) > half_fov + kVisibilityEpsilon)
        continue;
      observe(c);
    }
  }
  return fresh;
}

double path_length(const std::vector<CellIndex>& path, double resolution) {
  double len = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) {
    const int dx = std::abs(path[i].x - path[i - 1].x), dy = std::abs(path[i].y - path[i - 1].y);
    len += (dx + dy == 2 ? std::numbers::sqrt2 : static_cast<double>(dx + dy)) * resolution;
  }
  return len;
}

StepResult step(SimState& state, const Pose& target, const std::vector<CellIndex>& path) {
  const OccupancyGrid& belief = state.belief;
  if (path.empty()) throw PlanningError("empty path");
  if (path.front() != belief.cell_of(state.robot.position()))
    throw PlanningError("path does not start at the robot cell");
  if (path.back() != belief.cell_of(target.position())) throw PlanningError("target is not the path endpoint");
  for (std::size_t i = 0; i < path.size(); ++i) {
    const CellIndex c = path[i];
    if (!belief.contains(c) || belief.at(c) != VoxelState::free)
      throw PlanningError("path crosses a non-free belief cell at index " + std::to_string(i));
    if (i > 0 && (std::abs(c.x - path[i - 1].x) > 1 || std::abs(c.y - path[i - 1].y) > 1))
      throw PlanningError("path is not 8-connected at index " + std::to_string(i));
  }
  StepResult r;
  r.path_length = path_length(path, belief.resolution());
  r.duration = traversal_time(r.path_length, angle_diff(target.yaw, state.robot.yaw), state.robot_model,
                              state.time_model);
  state.elapsed_time += r.duration;
  state.distance_traveled += r.path_length;
  state.robot = target;
  r.newly_observed = sense(state);
  return r;
}

std::vector<std::uint8_t> observable_cells(const OccupancyGrid& gt, const Pose& start, const RobotModel& robot,
                                           const SensorModel& sensor) {
  const CellIndex sc = gt.cell_of(start.position());
  if (!gt.contains(sc) || gt.at(sc) != VoxelState::free) throw ParameterError("start is not a free cell");
  const auto trav = inflate_obstacles(gt, robot.footprint_radius, false, sc);
  const DistanceField field(trav, sc, gt.resolution());
  std::vector<std::uint8_t> mask(gt.size(), 0);
  const double range = sensor.range_cells(gt.resolution());
  const double r2 = range * range + kVisibilityEpsilon;
  const int ri = static_cast<int>(std::ceil(range));
  auto blocks = [](VoxelState s) { return s == VoxelState::occupied; };
  for (const CellIndex p : field.reachable_cells()) {
    mask[gt.index(p.x, p.y)] = 1;
    const Vec2 origin{p.x + 0.5, p.y + 0.5};
    for (int y = std::max(0, p.y - ri); y <= std::min(gt.height() - 1, p.y + ri); ++y) {
      for (int x = std::max(0, p.x - ri); x <= std::min(gt.width() - 1, p.x + ri); ++x) {
        auto& m = mask[gt.index(x, y)];
        if (m) continue;
        const double dx = x - p.x, dy = y - p.y;
        if (dx * dx + dy * dy > r2) continue;
        if (line_of_sight(gt, origin, {x, y}, blocks)) m = 1;
      }
    }
  }
  return mask;
}

}  // namespace nbvlearn
