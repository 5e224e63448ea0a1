#include "nbvlearn/planning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <thread>

#include "nbvlearn/errors.hpp"
#include "nbvlearn/visibility.hpp"

namespace nbvlearn {

std::string to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::uniform: return "uniform";
    case SamplerKind::cvae: return "cvae";
    case SamplerKind::imitation: return "imitation";
  }
  return "?";
}

std::string to_string(GainMode m) {
  switch (m) {
    case GainMode::raycast: return "raycast";
    case GainMode::learned_mlp: return "learned_mlp";
    case GainMode::learned_cnn: return "learned_cnn";
    case GainMode::joint: return "joint";
  }
  return "?";
}

SamplerKind parse_sampler(const std::string& s) {
  if (s == "uniform") return SamplerKind::uniform;
  if (s == "cvae") return SamplerKind::cvae;
  if (s == "imitation") return SamplerKind::imitation;
  throw ParameterError("unknown sampler '" + s + "' (expected uniform|cvae|imitation)");
}

GainMode parse_gain_mode(const std::string& s) {
  if (s == "raycast") return GainMode::raycast;
  if (s == "learned_mlp" || s == "mlp") return GainMode::learned_mlp;
  if (s == "learned_cnn" || s == "cnn") return GainMode::learned_cnn;
  if (s == "joint") return GainMode::joint;
  throw ParameterError("unknown gain mode '" + s + "' (expected raycast|learned_mlp|learned_cnn|joint)");
}

void PlannerConfig::validate() const {
  if (n_samples < 1) throw ParameterError("n_samples must be >= 1");
  if (yaw_bins < 4) throw ParameterError("yaw_bins must be >= 4");
  if (max_resample_attempts < 0) throw ParameterError("max_resample_attempts must be >= 0");
  if (gain_mode == GainMode::joint && sampler != SamplerKind::cvae)
    throw ParameterError("joint gain mode requires the cvae sampler");
  robot.validate();
  sensor.validate();
}

namespace {

bool is_free(VoxelState s) { return s == VoxelState::free; }
bool is_unknown(VoxelState s) { return s == VoxelState::unknown; }
bool not_free(VoxelState s) { return s != VoxelState::free; }

Vec2 local_grid(const LocalMap& local, Vec2 metric) {
  return {metric.x / local.cells.resolution(), metric.y / local.cells.resolution()};
}

CellIndex local_cell(const LocalMap& local, Vec2 metric) {
  const Vec2 g = local_grid(local, metric);
  return {static_cast<int>(std::floor(g.x)), static_cast<int>(std::floor(g.y))};
}

Vec2 local_center(const LocalMap& local, CellIndex c) {
  return {(c.x + 0.5) * local.cells.resolution(), (c.y + 0.5) * local.cells.resolution()};
}

void require_free(const LocalMap& local, Vec2 metric) {
  const CellIndex c = local_cell(local, metric);
  if (!local.cells.contains(c)) throw InfeasiblePoseError("pose outside the local map");
  if (!is_free(local.cells.at(c))) throw InfeasiblePoseError("pose cell is not free");
}

}  // namespace

int compute_gain(const LocalMap& local, const Pose& pose, const SensorModel& sensor) {
  require_free(local, pose.position());
  int gain = 0;
  for_each_visible_cell(local.cells, local_grid(local, pose.position()), sensor.range_cells(local.cells.resolution()),
                        pose.yaw, 0.5 * sensor.fov, is_unknown, not_free, [&](CellIndex, double) { ++gain; });
  return gain;
}

double yaw_of_bin(int bin, int bins) { return normalize_angle(2.0 * std::numbers::pi * bin / bins); }

std::vector<int> gains_per_bin(const LocalMap& local, Vec2 position, const SensorModel& sensor, int yaw_bins) {
  if (yaw_bins < 1) throw ParameterError("yaw_bins must be >= 1");
  require_free(local, position);
  std::vector<double> bearings;
  for_each_visible_cell(local.cells, local_grid(local, position), sensor.range_cells(local.cells.resolution()), 0.0,
                        std::numbers::pi, is_unknown, not_free,
                        [&](CellIndex, double bearing) { bearings.push_back(bearing); });
  const double half_fov = 0.5 * sensor.fov;
  const bool full_circle = half_fov >= std::numbers::pi;
  std::vector<int> gains(static_cast<std::size_t>(yaw_bins), 0);
  for (int k = 0; k < yaw_bins; ++k) {
    const double yaw = yaw_of_bin(k, yaw_bins);
    int g = 0;
    for (double b : bearings)
      if (full_circle || std::abs(angle_diff(b, yaw)) <= half_fov + kVisibilityEpsilon) ++g;
    gains[static_cast<std::size_t>(k)] = g;
  }
  return gains;
}

OrientedGain optimize_orientation(const LocalMap& local, Vec2 position, const SensorModel& sensor, int yaw_bins) {
  const auto gains = gains_per_bin(local, position, sensor, yaw_bins);
  const auto best = std::max_element(gains.begin(), gains.end());  // first maximum
  const int k = static_cast<int>(best - gains.begin());
  return {yaw_of_bin(k, yaw_bins), *best};
}

bool sees_unknown(const OccupancyGrid& grid, Vec2 p, double range_cells) {
  const double r2 = range_cells * range_cells + kVisibilityEpsilon;
  const int x0 = std::max(0, static_cast<int>(std::floor(p.x - range_cells)));
  const int x1 = std::min(grid.width() - 1, static_cast<int>(std::floor(p.x + range_cells)));
  const int y0 = std::max(0, static_cast<int>(std::floor(p.y - range_cells)));
  const int y1 = std::min(grid.height() - 1, static_cast<int>(std::floor(p.y + range_cells)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (grid.at(x, y) != VoxelState::unknown) continue;
      const double dx = x + 0.5 - p.x, dy = y + 0.5 - p.y;
      if (dx * dx + dy * dy > r2) continue;
      if (line_of_sight(grid, p, {x, y}, not_free)) return true;
    }
  }
  return false;
}

Traversability local_traversability(const LocalMap& local, const RobotModel& robot) {
  return inflate_obstacles(local.cells, robot.footprint_radius, true, local.robot_cell());
}

std::optional<std::vector<CellIndex>> reachable_path(const LocalMap& local, const Pose& from, const Pose& to,
                                                     const RobotModel& robot) {
  const CellIndex a = local_cell(local, from.position());
  const CellIndex b = local_cell(local, to.position());
  if (!local.cells.contains(a) || !local.cells.contains(b)) return std::nullopt;
  const auto trav = inflate_obstacles(local.cells, robot.footprint_radius, true, a);
  return astar_path(trav, a, b, local.cells.resolution());
}

double candidate_cost(double path_length, double delta_yaw, const RobotModel& robot, double resolution) {
  return std::max(traversal_time(path_length, delta_yaw, robot), resolution / robot.v_max);
}

LocalContext::LocalContext(LocalMap map, const RobotModel& robot)
    : local(std::move(map)),
      trav(local_traversability(local, robot)),
      field(trav, local.robot_cell(), local.cells.resolution()) {}

std::pair<Pose, int> sample_uniform(const LocalContext& ctx, const SensorModel& sensor, int yaw_bins, Rng& rng) {
  const auto& cells = ctx.field.reachable_cells();
  if (cells.empty()) throw SamplingExhaustedError("no reachable free cell in the local map");
  const CellIndex c = cells[rng.uniform_index(cells.size())];
  const Vec2 p = local_center(ctx.local, c);
  const auto best = optimize_orientation(ctx.local, p, sensor, yaw_bins);
  return {Pose(p.x, p.y, best.yaw), best.gain};
}

std::size_t select_nbv(std::span<const Candidate> candidates) {
  if (candidates.empty()) throw PlanningError("no candidate to select from");
  std::size_t best = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!(candidates[i].cost > 0.0)) throw PlanningError("candidate " + std::to_string(i) + " has non-positive cost");
    if (i > 0 && candidates[i].utility() > candidates[best].utility()) best = i;
  }
  return best;
}

bool detect_local_minimum(const LocalContext& ctx, const SensorModel& sensor, const LocalMinimumMonitor& monitor) {
  if (monitor.triggered()) return true;
  if (ctx.local.cells.count(VoxelState::unknown) == 0) return true;
  const double range = sensor.range_cells(ctx.local.cells.resolution());
  for (const CellIndex c : ctx.field.reachable_cells()) {
    if (sees_unknown(ctx.local.cells, {c.x + 0.5, c.y + 0.5}, range)) return false;
  }
  return true;
}

std::vector<CellIndex> find_frontiers(const OccupancyGrid& belief) {
  std::vector<CellIndex> out;
  for (int y = 0; y < belief.height(); ++y) {
    for (int x = 0; x < belief.width(); ++x) {
      if (belief.at(x, y) != VoxelState::free) continue;
      const bool frontier = belief.at_or(x + 1, y, VoxelState::free) == VoxelState::unknown ||
                            belief.at_or(x - 1, y, VoxelState::free) == VoxelState::unknown ||
                            belief.at_or(x, y + 1, VoxelState::free) == VoxelState::unknown ||
                            belief.at_or(x, y - 1, VoxelState::free) == VoxelState::unknown;
      if (frontier) out.push_back({x, y});
    }
  }
  return out;
}

Pose local_to_world(const LocalMap& local, const Pose& p) {
  const Vec2 o = local.cells.origin();
  return Pose(o.x + p.x, o.y + p.y, p.yaw);
}

Pose world_to_local(const LocalMap& local, const Pose& p) {
  const Vec2 o = local.cells.origin();
  return Pose(p.x - o.x, p.y - o.y, p.yaw);
}

namespace {

/// Best yaw and gain at a global cell, evaluated on the local window around it.
OrientedGain oriented_gain_at(const OccupancyGrid& belief, CellIndex c, const SensorModel& sensor, int yaw_bins) {
  const Vec2 w = belief.cell_center(c);
  const LocalMap local = extract_local_map(belief, Pose(w.x, w.y, 0.0));
  return optimize_orientation(local, local_center(local, local.robot_cell()), sensor, yaw_bins);
}

}  // namespace

std::optional<GlobalPlan> global_frontier_plan(const OccupancyGrid& belief, const Pose& robot,
                                               const RobotModel& robot_model, const SensorModel& sensor,
                                               int yaw_bins) {
  const CellIndex rc = belief.cell_of(robot.position());
  const auto trav = inflate_obstacles(belief, robot_model.footprint_radius, true, rc);
  const DistanceField field(trav, rc, belief.resolution());
  const auto frontiers = find_frontiers(belief);

  auto make_plan = [&](CellIndex c, const OrientedGain& og) {
    const Vec2 w = belief.cell_center(c);
    return GlobalPlan{Pose(w.x, w.y, og.yaw), field.path_to(c), og.gain};
  };

  // Cluster frontier cells by 8-connectivity.
  std::vector<std::int32_t> label(belief.size(), -1);
  std::vector<std::uint8_t> is_frontier(belief.size(), 0);
  for (auto c : frontiers) is_frontier[belief.index(c.x, c.y)] = 1;
  std::vector<std::vector<CellIndex>> clusters;
  for (auto seed : frontiers) {
    if (label[belief.index(seed.x, seed.y)] >= 0) continue;
    const auto id = static_cast<std::int32_t>(clusters.size());
    clusters.emplace_back();
    std::vector<CellIndex> stack{seed};
    label[belief.index(seed.x, seed.y)] = id;
    while (!stack.empty()) {
      const CellIndex c = stack.back();
      stack.pop_back();
      clusters.back().push_back(c);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const CellIndex n{c.x + dx, c.y + dy};
          if (!belief.contains(n)) continue;
          const auto i = belief.index(n.x, n.y);
          if (!is_frontier[i] || label[i] >= 0) continue;
          label[i] = id;
          stack.push_back(n);
        }
      }
    }
  }

  struct ClusterRank {
    double distance;
    std::size_t id;
    std::vector<CellIndex> access;
  };
  const int reach = static_cast<int>(std::ceil(robot_model.footprint_radius / belief.resolution() - 1e-9)) + 1;
  std::vector<ClusterRank> ranked;
  std::vector<std::int32_t> stamp(belief.size(), -1);
  for (std::size_t k = 0; k < clusters.size(); ++k) {
    ClusterRank r{DistanceField::kUnreachable, k, {}};
    for (const auto c : clusters[k]) {
      for (int dy = -reach; dy <= reach; ++dy) {
        for (int dx = -reach; dx <= reach; ++dx) {
          const CellIndex n{c.x + dx, c.y + dy};
          if (!field.reachable(n)) continue;
          auto& s = stamp[belief.index(n.x, n.y)];
          if (s == static_cast<std::int32_t>(k)) continue;
          s = static_cast<std::int32_t>(k);
          r.access.push_back(n);
          r.distance = std::min(r.distance, field.distance(n));
        }
      }
    }
    if (!r.access.empty()) ranked.push_back(std::move(r));
  }
  std::sort(ranked.begin(), ranked.end(), [](const ClusterRank& a, const ClusterRank& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  });

  constexpr std::size_t kMaxGoalsPerCluster = 64;
  for (auto& r : ranked) {
    const auto& cells = clusters[r.id];
    Vec2 centroid{0.0, 0.0};
    for (auto c : cells) centroid = centroid + Vec2{c.x + 0.5, c.y + 0.5};
    centroid = (1.0 / static_cast<double>(cells.size())) * centroid;
    auto d2 = [&](CellIndex c) {
      const double dx = c.x + 0.5 - centroid.x, dy = c.y + 0.5 - centroid.y;
      return dx * dx + dy * dy;
    };
    std::stable_sort(r.access.begin(), r.access.end(),
                     [&](CellIndex a, CellIndex b) { return d2(a) != d2(b) ? d2(a) < d2(b) : a < b; });
    const std::size_t limit = std::min(r.access.size(), kMaxGoalsPerCluster);
    for (std::size_t i = 0; i < limit; ++i) {
      const auto og = oriented_gain_at(belief, r.access[i], sensor, yaw_bins);
      if (og.gain > 0) return make_plan(r.access[i], og);
    }
  }

  // Nothing next to a frontier sees unknown space; look for any vantage point.
  const double range = sensor.range_cells(belief.resolution());
  for (const CellIndex c : field.reachable_cells()) {
    if (!sees_unknown(belief, {c.x + 0.5, c.y + 0.5}, range)) continue;
    const auto og = oriented_gain_at(belief, c, sensor, yaw_bins);
    if (og.gain > 0) return make_plan(c, og);
  }
  return std::nullopt;
}

void check_models(const PlannerConfig& config, const PlannerModels& models) {
  if (config.sampler == SamplerKind::cvae && !models.cvae) throw ParameterError("cvae sampler requires a cvae model");
  if (config.sampler == SamplerKind::imitation && !models.imitation)
    throw ParameterError("imitation sampler requires an imitation model");
  if (config.gain_mode == GainMode::learned_mlp && !models.gain_mlp)
    throw ParameterError("learned_mlp gain mode requires a gain_mlp model");
  if (config.gain_mode == GainMode::learned_cnn && !models.gain_cnn)
    throw ParameterError("learned_cnn gain mode requires a gain_cnn model");
}

namespace {

struct Draw {
  Pose pose;  // local frame
  std::optional<double> gain;
  SamplerKind source;
  CellIndex cell;
};

std::vector<double> raycast_gains(const LocalMap& local, const std::vector<Draw>& draws, const SensorModel& sensor,
                                  bool parallel) {
  std::vector<double> gains(draws.size(), 0.0);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) gains[i] = compute_gain(local, draws[i].pose, sensor);
  };
  const std::size_t threads = parallel ? std::max(1u, std::thread::hardware_concurrency()) : 1;
  if (threads <= 1 || draws.size() < 2) {
    work(0, draws.size());
    return gains;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (draws.size() + threads - 1) / threads;
  for (std::size_t b = 0; b < draws.size(); b += chunk) pool.emplace_back(work, b, std::min(draws.size(), b + chunk));
  return gains;
}

}  // namespace

PlanResult plan_step(const SimState& state, const PlannerConfig& config, const PlannerModels& models,
                     const LocalMinimumMonitor& monitor, Rng& rng) {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  PlanResult result;
  const RobotModel& robot = config.robot;
  const SensorModel& sensor = config.sensor;
  const double res = state.belief.resolution();

  const LocalContext ctx(extract_local_map(state.belief, state.robot), robot);
  const LocalMap& local = ctx.local;
  bool local_minimum = detect_local_minimum(ctx, sensor, monitor);
  if (local_minimum) {
    if (auto plan = global_frontier_plan(state.belief, state.robot, robot, sensor, config.yaw_bins)) {
      result.status = PlanStatus::global;
      result.chosen.pose = plan->goal;
      result.chosen.gain = plan->gain;
      result.chosen.path = std::move(plan->path);
      result.chosen.cost = candidate_cost(path_length(result.chosen.path, res),
                                          angle_diff(plan->goal.yaw, state.robot.yaw), robot, res);
      result.compute_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
      return result;
    }
    // Only the counter fired and no frontier qualifies: keep planning locally.
    LocalMinimumMonitor fresh;
    fresh.threshold = monitor.threshold;
    if (!monitor.triggered() || detect_local_minimum(ctx, sensor, fresh)) {
      result.status = PlanStatus::complete;
      result.compute_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
      return result;
    }
  }

  std::vector<Draw> draws;
  const int wanted = config.sampler == SamplerKind::imitation ? 1 : config.n_samples;
  auto draw_uniform = [&]() {
    auto [pose, gain] = sample_uniform(ctx, sensor, config.yaw_bins, rng);
    draws.push_back({pose, static_cast<double>(gain), SamplerKind::uniform, local_cell(local, pose.position())});
  };
  auto accept_proposals = [&](const std::vector<Proposal>& props, SamplerKind source) {
    for (const auto& p : props) {
      if (static_cast<int>(draws.size()) >= wanted) break;
      const Vec2 clamped{std::clamp(p.pose.x, 0.0, std::nextafter(local.extent(), 0.0)),
                         std::clamp(p.pose.y, 0.0, std::nextafter(local.extent(), 0.0))};
      const CellIndex c = local_cell(local, clamped);
      if (!ctx.field.reachable(c)) {
        ++result.infeasible_draws;
        continue;
      }
      const Vec2 center = local_center(local, c);
      draws.push_back({Pose(center.x, center.y, p.pose.yaw), p.gain, source, c});
    }
  };

  switch (config.sampler) {
    case SamplerKind::uniform:
      for (int i = 0; i < wanted; ++i) draw_uniform();
      break;
    case SamplerKind::cvae: {
      const int budget = config.resample_budget();
      accept_proposals(models.cvae->propose(local, wanted, rng), SamplerKind::cvae);
      while (static_cast<int>(draws.size()) < wanted && result.infeasible_draws < budget) {
        const int need = std::min(wanted - static_cast<int>(draws.size()), budget - result.infeasible_draws);
        accept_proposals(models.cvae->propose(local, need, rng), SamplerKind::cvae);
      }
      break;
    }
    case SamplerKind::imitation:
      accept_proposals(models.imitation->propose(local, 1, rng), SamplerKind::imitation);
      break;
  }
  while (static_cast<int>(draws.size()) < wanted) {
    draw_uniform();
    ++result.backfilled;
  }

  // Gains.
  std::vector<double> gains(draws.size(), 0.0);
  switch (config.gain_mode) {
    case GainMode::raycast: {
      std::vector<Draw> pending;
      std::vector<std::size_t> where;
      for (std::size_t i = 0; i < draws.size(); ++i) {
        if (draws[i].source == SamplerKind::uniform) {
          gains[i] = *draws[i].gain;
        } else {
          pending.push_back(draws[i]);
          where.push_back(i);
        }
      }
      const auto g = raycast_gains(local, pending, sensor, config.parallel_scoring);
      for (std::size_t k = 0; k < g.size(); ++k) gains[where[k]] = g[k];
      break;
    }
    case GainMode::learned_mlp:
    case GainMode::learned_cnn: {
      std::vector<Pose> poses;
      for (const auto& d : draws) poses.push_back(d.pose);
      const GainEstimator* est = config.gain_mode == GainMode::learned_mlp ? models.gain_mlp : models.gain_cnn;
      gains = est->estimate(local, poses);
      break;
    }
    case GainMode::joint:
      for (std::size_t i = 0; i < draws.size(); ++i) {
        if (draws[i].source == SamplerKind::cvae) {
          if (!draws[i].gain) throw ParameterError("joint gain mode needs a cvae model trained with gains");
          gains[i] = *draws[i].gain;
        } else {
          gains[i] = *draws[i].gain;  // uniform back-fill carries its ray-cast gain
        }
      }
      break;
  }

  result.candidates.reserve(draws.size());
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const auto& d = draws[i];
    Candidate c;
    c.source = d.source;
    c.gain = gains[i];
    std::vector<CellIndex> path = ctx.field.path_to(d.cell);
    const double len = ctx.field.distance(d.cell);
    c.cost = candidate_cost(len, angle_diff(d.pose.yaw, local.robot_yaw), robot, res);
    for (auto& cell : path) cell = local.to_global(cell);
    c.path = std::move(path);
    c.pose = local_to_world(local, d.pose);
    result.candidates.push_back(std::move(c));
  }
  result.chosen = result.candidates[select_nbv(result.candidates)];
  result.status = PlanStatus::local;
  result.compute_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return result;
}

}  // namespace nbvlearn
