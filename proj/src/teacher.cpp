#include <algorithm>
#include <condition_variable>
#include <exception>
#include <memory>
#include <mutex>
#include <thread>

#include "nbvlearn/dataset.hpp"
#include "nbvlearn/errors.hpp"

namespace nbvlearn {

namespace {

struct Pick {
  Pose pose;  // local frame
  int gain = 0;
  CellIndex cell;
};

// Best-utility winner of n uniform candidates, ties to the first draw.
Pick teacher_pick(const LocalContext& ctx, const TeacherConfig& cfg, Rng& rng) {
  const double res = ctx.local.cells.resolution();
  Pick best;
  double best_u = -1.0;
  for (int i = 0; i < cfg.n_candidates; ++i) {
    auto [pose, gain] = sample_uniform(ctx, cfg.sensor, cfg.yaw_bins, rng);
    const CellIndex c{static_cast<int>(pose.x / res), static_cast<int>(pose.y / res)};
    const double cost =
        candidate_cost(ctx.field.distance(c), angle_diff(pose.yaw, ctx.local.robot_yaw), cfg.robot, res);
    const double u = gain / cost;
    if (u > best_u) {
      best_u = u;
      best = {pose, gain, c};
    }
  }
  return best;
}

PoseTarget to_target(const Pick& p) { return {p.pose.x, p.pose.y, p.pose.yaw, static_cast<double>(p.gain)}; }

constexpr std::uint64_t kEpisodeStream = 0;

std::uint64_t repetition_seed(std::uint64_t seed, int step, int reps, int rep) {
  return derive_seed(seed, 1 + static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(reps) +
                               static_cast<std::uint64_t>(rep));
}

}  // namespace

std::vector<DatasetRecord> collect_teacher_samples(const OccupancyGrid& world, const Pose& start,
                                                   const TeacherConfig& config, std::uint64_t seed,
                                                   std::uint32_t world_id) {
  config.validate();
  const CellIndex sc = world.cell_of(start.position());
  if (!world.contains(sc) || world.at(sc) != VoxelState::free)
    throw ParameterError("teacher start pose is not in a free cell");

  auto gt = std::make_shared<const OccupancyGrid>(world);
  SimState state = make_sim_state(gt, start, config.robot, config.sensor);
  sense(state);

  PlannerConfig pc;
  pc.n_samples = config.n_candidates;
  pc.yaw_bins = config.yaw_bins;
  pc.robot = config.robot;
  pc.sensor = config.sensor;

  Rng rng(derive_seed(seed, kEpisodeStream));
  LocalMinimumMonitor monitor;
  std::vector<DatasetRecord> records;
  int local_steps = 0;
  for (int s = 0; s < config.step_budget; ++s) {
    const LocalContext ctx(extract_local_map(state.belief, state.robot), config.robot);
    Pose target;
    std::vector<CellIndex> path;
    if (!detect_local_minimum(ctx, config.sensor, monitor)) {
      const bool record =
          local_steps % config.record_stride == 0 && static_cast<int>(records.size()) < config.max_records;
      ++local_steps;
      Pick chosen;
      if (record) {
        DatasetRecord r;
        r.world_id = world_id;
        r.step = static_cast<std::uint32_t>(s);
        r.local = ctx.local;
        for (int rep = 0; rep < config.repetitions; ++rep) {
          const auto rs = repetition_seed(seed, s, config.repetitions, rep);
          Rng rr(rs);
          const Pick p = teacher_pick(ctx, config, rr);
          if (rep == 0) chosen = p;
          r.targets.push_back(to_target(p));
          r.negative.push_back(0);
          r.rng_seeds.push_back(rs);
        }
        records.push_back(std::move(r));
      } else {
        chosen = teacher_pick(ctx, config, rng);
      }
      path = ctx.field.path_to(chosen.cell);
      for (auto& c : path) c = ctx.local.to_global(c);
      target = local_to_world(ctx.local, chosen.pose);
    } else {
      const auto plan = plan_step(state, pc, {}, monitor, rng);
      if (plan.status == PlanStatus::complete) break;
      target = plan.chosen.pose;
      path = plan.chosen.path;
    }
    const auto result = step(state, target, path);
    monitor.record(result.newly_observed.size());
  }
  return records;
}

PoseTarget replay_teacher_repetition(const DatasetRecord& record, int rep, const TeacherConfig& config) {
  if (rep < 0 || static_cast<std::size_t>(rep) >= record.rng_seeds.size())
    throw ParameterError("record has no repetition " + std::to_string(rep));
  const LocalContext ctx(record.local, config.robot);
  Rng rr(record.rng_seeds[static_cast<std::size_t>(rep)]);
  return to_target(teacher_pick(ctx, config, rr));
}

void collect_dataset(const CollectOptions& options, const std::filesystem::path& out) {
  if (options.worlds < 1) throw ParameterError("collect needs at least one world");
  options.teacher.validate();
  const int total = options.worlds;
  int threads = options.threads > 0 ? options.threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, total);

  DatasetMeta meta;
  meta.world_count = static_cast<std::uint32_t>(total);
  meta.seed = options.seed;
  meta.resolution = options.world.resolution;
  meta.teacher = options.teacher;
  DatasetWriter writer(out, meta);

  std::vector<std::optional<std::vector<DatasetRecord>>> slots(static_cast<std::size_t>(total));
  std::mutex mu;
  std::condition_variable cv;
  int next = 0;
  std::exception_ptr failure;

  auto worker = [&]() {
    for (;;) {
      int i;
      {
        std::lock_guard lock(mu);
        if (failure || next >= total) return;
        i = next++;
      }
      try {
        const std::uint64_t ws = derive_seed(options.seed, static_cast<std::uint64_t>(i));
        WorldGenParams params = options.world;
        params.seed = ws;
        params.kind = WorldKind::maze;
        const auto world = generate_world(params);
        Rng start_rng(derive_seed(ws, 1));
        const Pose start = pick_start_pose(world, options.teacher.robot.footprint_radius, start_rng);
        auto recs = collect_teacher_samples(world, start, options.teacher, derive_seed(ws, 2),
                                            static_cast<std::uint32_t>(i));
        std::lock_guard lock(mu);
        slots[static_cast<std::size_t>(i)] = std::move(recs);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
      cv.notify_all();
    }
  };

  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);

  // Single appender: records land in world order whatever the finishing order.
  try {
    for (int i = 0; i < total; ++i) {
      std::vector<DatasetRecord> recs;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return failure || slots[static_cast<std::size_t>(i)].has_value(); });
        if (failure) break;
        recs = std::move(*slots[static_cast<std::size_t>(i)]);
        slots[static_cast<std::size_t>(i)].reset();
      }
      for (const auto& r : recs) writer.append(r);
      if (options.progress) options.progress(i + 1, total);
    }
  } catch (...) {
    std::lock_guard lock(mu);
    if (!failure) failure = std::current_exception();
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  writer.close();
}

}  // namespace nbvlearn
