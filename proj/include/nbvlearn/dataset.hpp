#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nbvlearn/planning.hpp"
#include "nbvlearn/sim.hpp"

namespace nbvlearn {

/// A view target in the local-map frame (meters from the window corner).
/// Gains are in voxel units.
struct PoseTarget {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  std::optional<double> gain;

  Pose pose() const { return Pose(x, y, yaw); }
  friend bool operator==(const PoseTarget&, const PoseTarget&) = default;
};

struct DatasetRecord {
  std::uint32_t world_id = 0;
  std::uint32_t step = 0;  ///< planning step within the teacher episode
  LocalMap local;
  std::vector<PoseTarget> targets;
  std::vector<std::uint8_t> negative;        ///< one flag per target
  std::vector<std::uint64_t> rng_seeds;      ///< one per teacher repetition

  std::size_t positive_count() const;
  void validate() const;
};

bool operator==(const DatasetRecord& a, const DatasetRecord& b);

struct TeacherConfig {
  int n_candidates = 25;
  int repetitions = 20;
  /// Record every k-th local planning step.
  int record_stride = 4;
  /// Records kept per world (the episode runs to completion regardless).
  int max_records = 20;
  int step_budget = 500;
  int yaw_bins = 16;
  RobotModel robot;
  SensorModel sensor;

  void validate() const;
};

struct DatasetMeta {
  std::uint32_t format_version = 0;
  std::uint64_t record_count = 0;
  std::uint32_t world_count = 0;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  double val_fraction = 0.2;
  /// "all", "train" or "val".
  std::string split = "all";
  double negatives_ratio = 0.0;
  double resolution = 0.2;
  TeacherConfig teacher;

  std::string to_json() const;
  static DatasetMeta from_json(const std::string& text);
};

struct Dataset {
  DatasetMeta meta;
  std::vector<DatasetRecord> records;
};

/// Runs one uniform-planner exploration episode with n_candidates samples per
/// step. On recorded steps the selection is repeated `repetitions` times with
/// independent logged seeds and every winner is stored; the first winner is
/// executed. Throws ParameterError if the start cell is not free.
std::vector<DatasetRecord> collect_teacher_samples(const OccupancyGrid& world, const Pose& start,
                                                   const TeacherConfig& config, std::uint64_t seed,
                                                   std::uint32_t world_id = 0);

/// Re-runs repetition `rep` of a record from its logged seed and returns the
/// winning target.
PoseTarget replay_teacher_repetition(const DatasetRecord& record, int rep, const TeacherConfig& config);

/// Ray-cast gain over cost of a local-frame target on the record's map.
/// Zero when the target cell is not reachable.
double target_utility(const LocalMap& local, const PoseTarget& target, const RobotModel& robot = {},
                      const SensorModel& sensor = {});

struct CollectOptions {
  int worlds = 10;
  std::uint64_t seed = 0;
  int threads = 0;  ///< 0: hardware concurrency
  WorldGenParams world;  ///< seed and kind are overridden per world
  TeacherConfig teacher;
  std::function<void(int done, int total)> progress;
};

/// World `i` uses world seed derive_seed(seed, i). Collected in parallel,
/// written in world order.
void collect_dataset(const CollectOptions& options, const std::filesystem::path& out);

/// Appends ceil(ratio * positives) random feasible poses to every record,
/// flagged negative and labeled with their ray-cast gain. Records without a
/// reachable cell are left untouched and counted in `skipped`.
std::vector<DatasetRecord> add_negatives(std::vector<DatasetRecord> records, double ratio, Rng& rng,
                                         std::size_t* skipped = nullptr, const RobotModel& robot = {},
                                         const SensorModel& sensor = {});

/// World-level split: whole worlds go to one side. Deterministic in seed.
std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double train_fraction, std::uint64_t seed);

// --- files ------------------------------------------------------------------

inline constexpr std::uint32_t kDatasetFileVersion = 1;

/// Streaming writer. The meta block has a fixed reserved size and is
/// rewritten with the final record count on close().
class DatasetWriter {
 public:
  DatasetWriter(const std::filesystem::path& path, DatasetMeta meta);
  ~DatasetWriter();
  DatasetWriter(const DatasetWriter&) = delete;
  DatasetWriter& operator=(const DatasetWriter&) = delete;

  void append(const DatasetRecord& record);
  void close();
  std::uint64_t count() const { return meta_.record_count; }

 private:
  void write_meta();
  std::filesystem::path path_;
  DatasetMeta meta_;
  std::ofstream os_;
  bool open_ = false;
};

/// Reads the meta block only.
DatasetMeta read_dataset_meta(const std::filesystem::path& path);

/// Streams records in file order. Corruption raises FormatError naming the
/// record index.
void for_each_record(const std::filesystem::path& path, const std::function<void(DatasetRecord&&)>& fn);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

struct DatasetStats {
  std::uint64_t records = 0;
  std::uint32_t worlds = 0;
  std::uint64_t positive_targets = 0;
  std::uint64_t negative_targets = 0;
  double mean_positive_gain = 0.0;
  double mean_negative_gain = 0.0;
  double mean_positive_utility = 0.0;
  double mean_unknown_fraction = 0.0;
};

DatasetStats dataset_stats(const std::filesystem::path& path, const RobotModel& robot = {});

}  // namespace nbvlearn
