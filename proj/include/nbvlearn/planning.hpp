#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nbvlearn/paths.hpp"
#include "nbvlearn/rng.hpp"
#include "nbvlearn/sim.hpp"

namespace nbvlearn {

enum class SamplerKind : std::uint8_t { uniform, cvae, imitation };
enum class GainMode : std::uint8_t { raycast, learned_mlp, learned_cnn, joint };

std::string to_string(SamplerKind k);
std::string to_string(GainMode m);
SamplerKind parse_sampler(const std::string& s);
GainMode parse_gain_mode(const std::string& s);

struct PlannerConfig {
  int n_samples = 10;
  SamplerKind sampler = SamplerKind::uniform;
  GainMode gain_mode = GainMode::raycast;
  int yaw_bins = 16;
  /// Re-draws allowed for infeasible learned samples; 0 means 10 * n_samples.
  int max_resample_attempts = 0;
  /// Score candidate gains on worker threads (off for timing benchmarks).
  bool parallel_scoring = false;
  RobotModel robot;
  SensorModel sensor;

  void validate() const;
  int resample_budget() const { return max_resample_attempts > 0 ? max_resample_attempts : 10 * n_samples; }
};

/// A scored candidate view. Pose and path are in the global frame.
struct Candidate {
  Pose pose;
  double gain = 0.0;
  double cost = 0.0;
  std::vector<CellIndex> path;
  SamplerKind source = SamplerKind::uniform;

  double utility() const { return gain / cost; }
};

/// Counts consecutive executed actions that observed nothing new.
struct LocalMinimumMonitor {
  int consecutive_zero_gain_actions = 0;
  int threshold = 5;

  void record(std::size_t newly_observed) {
    consecutive_zero_gain_actions = newly_observed > 0 ? 0 : consecutive_zero_gain_actions + 1;
  }
  bool triggered() const { return consecutive_zero_gain_actions >= threshold; }
};

// --- gain -------------------------------------------------------------------

/// Number of unknown local-map cells visible from `pose` (local metric frame:
/// meters from the window corner). A cell counts when its center is within
/// range and field of view and the segment to it crosses only free cells;
/// unknown cells are counted at first contact and block what lies behind.
/// Throws InfeasiblePoseError unless the pose cell is free.
int compute_gain(const LocalMap& local, const Pose& pose, const SensorModel& sensor);

struct OrientedGain {
  double yaw = 0.0;
  int gain = 0;
};

/// Yaw of bin k, k in [0, bins): 2*pi*k/bins wrapped to (-pi, pi].
double yaw_of_bin(int bin, int bins);

/// Best of `yaw_bins` evenly spaced yaws, ties to the lowest bin. `position`
/// is in the local metric frame.
OrientedGain optimize_orientation(const LocalMap& local, Vec2 position, const SensorModel& sensor, int yaw_bins);

/// Gain of every yaw bin at once (the visibility test is yaw independent).
std::vector<int> gains_per_bin(const LocalMap& local, Vec2 position, const SensorModel& sensor, int yaw_bins);

/// True iff some unknown cell in range is in line of sight of `position`.
bool sees_unknown(const OccupancyGrid& grid, Vec2 position_grid, double range_cells);

// --- paths ------------------------------------------------------------------

/// Traversability of a local map: occupied and unknown cells inflated by the
/// footprint; the robot cell is exempt.
Traversability local_traversability(const LocalMap& local, const RobotModel& robot);

/// Shortest footprint-safe path between two local-frame poses, in local cells.
std::optional<std::vector<CellIndex>> reachable_path(const LocalMap& local, const Pose& from, const Pose& to,
                                                     const RobotModel& robot);

/// Planning cost: traversal time floored at one cell traversal.
double candidate_cost(double path_length, double delta_yaw, const RobotModel& robot, double resolution);

// --- sampling ---------------------------------------------------------------

/// Local planning context shared by the samplers and scoring of one step.
struct LocalContext {
  LocalContext(LocalMap map, const RobotModel& robot);
  LocalMap local;
  Traversability trav;
  DistanceField field;
};

/// Uniform draw over reachable local cells (cell center), yaw from
/// optimize_orientation. Returns the pose in the local frame together with
/// its ray-cast gain. Throws SamplingExhaustedError if nothing is reachable.
std::pair<Pose, int> sample_uniform(const LocalContext& ctx, const SensorModel& sensor, int yaw_bins, Rng& rng);

/// Index of the highest gain/cost ratio, ties to the lowest index.
std::size_t select_nbv(std::span<const Candidate> candidates);

/// Local minimum: the monitor fired, or no reachable local cell sees any
/// unknown cell.
bool detect_local_minimum(const LocalContext& ctx, const SensorModel& sensor, const LocalMinimumMonitor& monitor);

// --- global -----------------------------------------------------------------

/// Free cells 4-adjacent to at least one unknown cell.
std::vector<CellIndex> find_frontiers(const OccupancyGrid& belief);

struct GlobalPlan {
  Pose goal;
  std::vector<CellIndex> path;  ///< global cells
  int gain = 0;
};

/// Frontier-based global planner. Frontier cells are clustered by
/// 8-connectivity; clusters are tried in order of path distance to their
/// nearest access cell (a reachable cell within footprint reach of the
/// cluster), and the goal is the access cell closest to the cluster centroid
/// with positive gain under an optimized yaw. Falls back to the nearest
/// reachable cell with positive gain. std::nullopt when nothing is left.
std::optional<GlobalPlan> global_frontier_plan(const OccupancyGrid& belief, const Pose& robot,
                                               const RobotModel& robot_model, const SensorModel& sensor,
                                               int yaw_bins);

// --- learned components -----------------------------------------------------

/// A pose proposal in the local metric frame, with an optional predicted gain
/// in voxel units (joint models).
struct Proposal {
  Pose pose;
  std::optional<double> gain;
};

class PoseProposer {
 public:
  virtual ~PoseProposer() = default;
  virtual std::vector<Proposal> propose(const LocalMap& local, int n, Rng& rng) const = 0;
};

class GainEstimator {
 public:
  virtual ~GainEstimator() = default;
  /// Predicted gains (voxel units) for local-frame poses.
  virtual std::vector<double> estimate(const LocalMap& local, std::span<const Pose> poses) const = 0;
};

struct PlannerModels {
  const PoseProposer* cvae = nullptr;
  const PoseProposer* imitation = nullptr;
  const GainEstimator* gain_mlp = nullptr;
  const GainEstimator* gain_cnn = nullptr;
};

/// Throws ParameterError when `config` needs a model that `models` lacks.
void check_models(const PlannerConfig& config, const PlannerModels& models);

// --- plan step --------------------------------------------------------------

enum class PlanStatus : std::uint8_t { local, global, complete };

struct PlanResult {
  PlanStatus status = PlanStatus::complete;
  Candidate chosen;
  std::vector<Candidate> candidates;  ///< scored local candidates (empty for global plans)
  double compute_seconds = 0.0;
  int infeasible_draws = 0;
  int backfilled = 0;
};

PlanResult plan_step(const SimState& state, const PlannerConfig& config, const PlannerModels& models,
                     const LocalMinimumMonitor& monitor, Rng& rng);

/// Local-frame metric pose to global frame.
Pose local_to_world(const LocalMap& local, const Pose& p);
Pose world_to_local(const LocalMap& local, const Pose& p);

}  // namespace nbvlearn
