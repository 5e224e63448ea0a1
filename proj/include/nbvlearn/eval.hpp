#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nbvlearn/dataset.hpp"
#include "nbvlearn/models.hpp"
#include "nbvlearn/planning.hpp"

namespace nbvlearn {

// --- episodes ---------------------------------------------------------------

enum class EpisodeStatus : std::uint8_t { complete, budget_exhausted, failed };
std::string to_string(EpisodeStatus s);

struct StepLog {
  int step = 0;
  double sim_time = 0.0;         ///< cumulative, s
  double compute_seconds = 0.0;  ///< wall clock around plan_step (timing field)
  double coverage = 0.0;         ///< fraction of observable cells known
  double distance = 0.0;         ///< cumulative, m
  Pose pose;                     ///< chosen, global frame
  SamplerKind sampler = SamplerKind::uniform;
  GainMode gain_mode = GainMode::raycast;
  bool global_planner = false;
  double predicted_gain = 0.0;  ///< gain the planner used for selection
  double true_gain = 0.0;       ///< ray-cast oracle on the step's local map
  double cost = 0.0;            ///< s
  double duration = 0.0;        ///< executed sim time of the action, s
  int newly_observed = 0;

  double true_utility() const { return cost > 0.0 ? true_gain / cost : 0.0; }
};

struct EpisodeLog {
  std::uint64_t seed = 0;
  std::size_t observable_cells = 0;
  double initial_coverage = 0.0;
  std::vector<StepLog> steps;
  EpisodeStatus status = EpisodeStatus::failed;
  std::string message;  ///< failure reason

  double final_coverage() const { return steps.empty() ? initial_coverage : steps.back().coverage; }
  double sim_time() const { return steps.empty() ? 0.0 : steps.back().sim_time; }
  double distance() const { return steps.empty() ? 0.0 : steps.back().distance; }
  double total_compute() const;
  double mean_step_compute() const;
  /// Sim time of the first step reaching `coverage`; 0 if already reached.
  std::optional<double> time_to_coverage(double coverage) const;
  /// Sum of action times plus gamma times the sum of planner compute times.
  double objective(double gamma) const;
  /// Mean oracle utility of the locally planned actions.
  std::optional<double> mean_true_utility() const;

  /// JSON lines: a header, one line per step, a summary. Timing fields are
  /// written only when `timing` is set.
  void write_jsonl(std::ostream& os, bool timing = true) const;
};

struct EpisodeConfig {
  PlannerConfig planner;
  int step_budget = 500;
  /// Coverage counted as complete exploration.
  double completion_coverage = 0.99;
  /// The episode stops once this coverage is reached.
  double stop_coverage = 1.0;
  int monitor_threshold = 5;

  void validate() const;
};

/// Reachable-observable mask used as the coverage denominator.
std::vector<std::uint8_t> compute_observable(const OccupancyGrid& world, const Pose& start,
                                             const EpisodeConfig& config);

/// Runs plan_step / step until stop_coverage, the step budget or planner
/// completion. `observable` defaults to compute_observable(). Throws
/// ParameterError before starting when a needed model is missing.
EpisodeLog run_episode(const OccupancyGrid& world, const Pose& start, const EpisodeConfig& config,
                       const PlannerModels& models, std::uint64_t seed,
                       const std::vector<std::uint8_t>* observable = nullptr);

// --- models on disk ---------------------------------------------------------

struct ModelPaths {
  std::optional<std::filesystem::path> cvae;
  std::optional<std::filesystem::path> gain_mlp;
  std::optional<std::filesystem::path> gain_cnn;
  std::optional<std::filesystem::path> imitation;
};

/// Owns loaded models and exposes them as PlannerModels.
struct LoadedModels {
  std::unique_ptr<CvaeModel> cvae;
  std::unique_ptr<GainModel> gain_mlp;
  std::unique_ptr<GainModel> gain_cnn;
  std::unique_ptr<ImitationModel> imitation;
  PlannerModels view() const;
};

/// Loads whatever `needed` asks for. Every missing path or file is listed in
/// one ParameterError.
LoadedModels load_models(const ModelPaths& paths, std::span<const PlannerConfig> needed);

// --- utility on stored maps -------------------------------------------------

struct UtilitySummary {
  std::size_t maps = 0;
  double mean_true_utility = 0.0;
  double mean_true_gain = 0.0;
  std::size_t infeasible_draws = 0;
  std::size_t backfilled = 0;
};

/// One local plan_step per record map (robot at the map center); the chosen
/// candidate is re-scored with the ray-cast oracle.
UtilitySummary utility_on_records(std::span<const DatasetRecord> records, const PlannerConfig& config,
                                  const PlannerModels& models, std::uint64_t seed);

// --- benchmark --------------------------------------------------------------

struct VariantSpec {
  std::string name;
  SamplerKind sampler = SamplerKind::uniform;
  GainMode gain_mode = GainMode::raycast;
  std::vector<int> n_samples{10};
};

struct WorldSetSpec {
  std::vector<std::filesystem::path> files;
  /// Generated when no files are given.
  int count = 5;
  std::uint64_t seed = 0;
  WorldGenParams params;
};

struct BenchmarkConfig {
  std::vector<VariantSpec> variants;
  WorldSetSpec worlds;
  int starts_per_world = 1;
  int repeats = 3;
  int step_budget = 500;
  std::vector<double> coverage_targets{0.90, 0.99};
  double gamma = 1.0;
  double completion_coverage = 0.99;
  double stop_coverage = 1.0;
  std::uint64_t seed = 0;
  int threads = 1;
  bool parallel_scoring = false;
  int yaw_bins = 16;
  RobotModel robot;
  SensorModel sensor;
  ModelPaths models;
  /// Per-episode JSON-lines logs, one file per episode, when set.
  std::optional<std::filesystem::path> episode_dir;

  void validate() const;
  static BenchmarkConfig from_json(const std::string& text, const std::filesystem::path& base_dir = {});
  std::string to_json() const;
};

BenchmarkConfig load_benchmark_config(const std::filesystem::path& path);

struct TargetStats {
  double target = 0.0;
  std::size_t reached = 0;
  double mean = 0.0;
  double std = 0.0;
};

struct BenchmarkRow {
  std::string variant;
  SamplerKind sampler = SamplerKind::uniform;
  GainMode gain_mode = GainMode::raycast;
  int n = 0;
  std::size_t episodes = 0;
  std::size_t completed = 0;
  std::vector<TargetStats> times;  ///< one per coverage target
  double mean_distance = 0.0;
  double std_distance = 0.0;
  double mean_final_coverage = 0.0;
  double mean_steps = 0.0;
  double mean_step_compute = 0.0;
  double mean_episode_compute = 0.0;
  double mean_objective = 0.0;
  double std_objective = 0.0;
  double mean_true_utility = 0.0;
};

struct BenchmarkResult {
  std::vector<double> coverage_targets;
  std::vector<BenchmarkRow> rows;
};

/// Every variant and N runs on worlds x starts x repeats episodes.
BenchmarkResult run_benchmark(const BenchmarkConfig& config);

/// Population standard deviation; 0 for fewer than two values.
double stddev(std::span<const double> v);

inline constexpr int kBenchmarkCsvVersion = 1;
void write_benchmark_csv(const BenchmarkResult& result, std::ostream& os, bool timing = true);
BenchmarkResult read_benchmark_csv(std::istream& is);

// --- pareto -----------------------------------------------------------------

struct ParetoPoint {
  std::string variant;
  int n = 0;
  double performance = 0.0;       ///< mean time to the coverage target, s (lower is better)
  double episode_compute = 0.0;   ///< mean planner compute per episode, s
  double step_compute = 0.0;      ///< mean planner compute per step, s
  bool pareto = false;
};

struct VariantTrend {
  std::string variant;
  std::size_t points = 0;
  /// +1 / -1 when the metric is monotone non-decreasing / non-increasing in N,
  /// 0 otherwise.
  int performance_trend = 0;
  int compute_trend = 0;
};

struct ParetoReport {
  double target = 0.90;
  std::vector<ParetoPoint> points;
  std::vector<VariantTrend> trends;
  std::vector<std::string> excluded;  ///< rows without a 90% time
};

/// Performance target defaults to 0.90. Dominance uses episode compute.
ParetoReport pareto_report(const BenchmarkResult& result, double target = 0.90);
void write_pareto_csv(const ParetoReport& report, std::ostream& os);
void write_trend_csv(const ParetoReport& report, std::ostream& os);

}  // namespace nbvlearn
