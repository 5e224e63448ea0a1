#include "nbvlearn/eval.hpp"

#include <algorithm>
#include <ostream>

#include "json.hpp"
#include "nbvlearn/errors.hpp"

namespace nbvlearn {

using nlohmann::json;

std::string to_string(EpisodeStatus s) {
  switch (s) {
    case EpisodeStatus::complete: return "complete";
    case EpisodeStatus::budget_exhausted: return "budget_exhausted";
    case EpisodeStatus::failed: return "failed";
  }
  return "failed";
}

// --- EpisodeLog -------------------------------------------------------------

double EpisodeLog::total_compute() const {
  double s = 0.0;
  for (const auto& st : steps) s += st.compute_seconds;
  return s;
}

double EpisodeLog::mean_step_compute() const {
  return steps.empty() ? 0.0 : total_compute() / static_cast<double>(steps.size());
}

std::optional<double> EpisodeLog::time_to_coverage(double coverage) const {
  if (initial_coverage >= coverage) return 0.0;
  for (const auto& st : steps)
    if (st.coverage >= coverage) return st.sim_time;
  return std::nullopt;
}

double EpisodeLog::objective(double gamma) const {
  double t = 0.0, c = 0.0;
  for (const auto& st : steps) {
    t += st.duration;
    c += st.compute_seconds;
  }
  return t + gamma * c;
}

std::optional<double> EpisodeLog::mean_true_utility() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& st : steps) {
    if (st.global_planner) continue;
    sum += st.true_utility();
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

void EpisodeLog::write_jsonl(std::ostream& os, bool timing) const {
  os << json{{"type", "episode"},
             {"seed", seed},
             {"observable_cells", observable_cells},
             {"initial_coverage", initial_coverage}}
            .dump()
     << '\n';
  for (const auto& s : steps) {
    json j{{"type", "step"},
           {"step", s.step},
           {"sim_time", s.sim_time},
           {"coverage", s.coverage},
           {"distance", s.distance},
           {"x", s.pose.x},
           {"y", s.pose.y},
           {"yaw", s.pose.yaw},
           {"sampler", to_string(s.sampler)},
           {"gain_mode", to_string(s.gain_mode)},
           {"global", s.global_planner},
           {"predicted_gain", s.predicted_gain},
           {"true_gain", s.true_gain},
           {"cost", s.cost},
           {"duration", s.duration},
           {"newly_observed", s.newly_observed}};
    if (timing) j["compute_s"] = s.compute_seconds;
    os << j.dump() << '\n';
  }
  json sum{{"type", "summary"},
           {"status", to_string(status)},
           {"steps", steps.size()},
           {"final_coverage", final_coverage()},
           {"sim_time", sim_time()},
           {"distance", distance()}};
  if (!message.empty()) sum["message"] = message;
  if (timing) sum["total_compute_s"] = total_compute();
  os << sum.dump() << '\n';
}

// --- run_episode ------------------------------------------------------------

void EpisodeConfig::validate() const {
  planner.validate();
  if (step_budget < 1) throw ParameterError("step budget must be >= 1");
  if (!(completion_coverage > 0.0 && completion_coverage <= 1.0))
    throw ParameterError("completion coverage must be in (0, 1]");
  if (!(stop_coverage > 0.0 && stop_coverage <= 1.0)) throw ParameterError("stop coverage must be in (0, 1]");
  if (monitor_threshold < 1) throw ParameterError("monitor threshold must be >= 1");
}

std::vector<std::uint8_t> compute_observable(const OccupancyGrid& world, const Pose& start,
                                             const EpisodeConfig& config) {
  return observable_cells(world, start, config.planner.robot, config.planner.sensor);
}

namespace {

// Oracle gain on a window centered on the pose.
int oracle_gain(const OccupancyGrid& belief, const Pose& pose, const SensorModel& sensor) {
  const LocalMap l = extract_local_map(belief, pose);
  return compute_gain(l, world_to_local(l, pose), sensor);
}

}  // namespace

EpisodeLog run_episode(const OccupancyGrid& world, const Pose& start, const EpisodeConfig& config,
                       const PlannerModels& models, std::uint64_t seed,
                       const std::vector<std::uint8_t>* observable) {
  config.validate();
  check_models(config.planner, models);
  const CellIndex sc = world.cell_of(start.position());
  if (!world.contains(sc) || world.at(sc) != VoxelState::free)
    throw ParameterError("episode start pose is not in a free cell");

  std::vector<std::uint8_t> own;
  if (!observable) {
    own = compute_observable(world, start, config);
    observable = &own;
  }
  if (observable->size() != world.size()) throw ParameterError("observable mask does not match the world");
  const auto vo = static_cast<std::size_t>(std::count(observable->begin(), observable->end(), std::uint8_t{1}));
  if (vo == 0) throw ParameterError("world has no observable cells from the start pose");

  EpisodeLog log;
  log.seed = seed;
  log.observable_cells = vo;

  auto gt = std::make_shared<const OccupancyGrid>(world);
  SimState state = make_sim_state(gt, start, config.planner.robot, config.planner.sensor);
  sense(state);
  std::size_t known = 0;
  for (std::size_t i = 0; i < world.size(); ++i)
    if ((*observable)[i] && state.belief.cells()[i] != VoxelState::unknown) ++known;
  auto coverage = [&] { return static_cast<double>(known) / static_cast<double>(vo); };
  log.initial_coverage = coverage();

  Rng rng(seed);
  LocalMinimumMonitor monitor;
  monitor.threshold = config.monitor_threshold;
  bool planner_done = false;
  try {
    for (int s = 0; s < config.step_budget && coverage() < config.stop_coverage; ++s) {
      const PlanResult plan = plan_step(state, config.planner, models, monitor, rng);
      if (plan.status == PlanStatus::complete) {
        planner_done = true;
        break;
      }
      StepLog sl;
      sl.step = s;
      sl.compute_seconds = plan.compute_seconds;
      sl.pose = plan.chosen.pose;
      sl.sampler = config.planner.sampler;
      sl.gain_mode = config.planner.gain_mode;
      sl.global_planner = plan.status == PlanStatus::global;
      sl.predicted_gain = plan.chosen.gain;
      sl.cost = plan.chosen.cost;
      if (sl.global_planner) {
        sl.true_gain = oracle_gain(state.belief, plan.chosen.pose, config.planner.sensor);
      } else {
        const LocalMap l = extract_local_map(state.belief, state.robot);
        sl.true_gain = compute_gain(l, world_to_local(l, plan.chosen.pose), config.planner.sensor);
      }
      const StepResult r = step(state, plan.chosen.pose, plan.chosen.path);
      monitor.record(r.newly_observed.size());
      for (const auto& c : r.newly_observed)
        if ((*observable)[world.index(c.x, c.y)]) ++known;
      sl.duration = r.duration;
      sl.newly_observed = static_cast<int>(r.newly_observed.size());
      sl.sim_time = state.elapsed_time;
      sl.distance = state.distance_traveled;
      sl.coverage = coverage();
      log.steps.push_back(sl);
    }
  } catch (const Error& e) {
    log.status = EpisodeStatus::failed;
    log.message = e.what();
    return log;
  }

  if (log.final_coverage() >= config.completion_coverage) {
    log.status = EpisodeStatus::complete;
  } else if (!planner_done && static_cast<int>(log.steps.size()) >= config.step_budget) {
    log.status = EpisodeStatus::budget_exhausted;
  } else {
    log.status = EpisodeStatus::failed;
    log.message = "planner found nothing left to explore at coverage " + std::to_string(log.final_coverage());
  }
  return log;
}

// --- models -----------------------------------------------------------------

PlannerModels LoadedModels::view() const {
  PlannerModels m;
  m.cvae = cvae.get();
  m.imitation = imitation.get();
  m.gain_mlp = gain_mlp.get();
  m.gain_cnn = gain_cnn.get();
  return m;
}

LoadedModels load_models(const ModelPaths& paths, std::span<const PlannerConfig> needed) {
  bool want_cvae = false, want_joint = false, want_mlp = false, want_cnn = false, want_imitation = false;
  for (const auto& c : needed) {
    want_cvae |= c.sampler == SamplerKind::cvae || c.gain_mode == GainMode::joint;
    want_joint |= c.gain_mode == GainMode::joint;
    want_imitation |= c.sampler == SamplerKind::imitation;
    want_mlp |= c.gain_mode == GainMode::learned_mlp;
    want_cnn |= c.gain_mode == GainMode::learned_cnn;
  }
  std::vector<std::string> missing;
  auto check = [&](bool want, const std::optional<std::filesystem::path>& p, const char* name) {
    if (!want) return false;
    if (!p) {
      missing.push_back(std::string(name) + " (no path configured)");
      return false;
    }
    if (!std::filesystem::exists(*p)) {
      missing.push_back(std::string(name) + " (" + p->string() + ")");
      return false;
    }
    return true;
  };
  const bool c = check(want_cvae, paths.cvae, "cvae");
  const bool m = check(want_mlp, paths.gain_mlp, "gain_mlp");
  const bool n = check(want_cnn, paths.gain_cnn, "gain_cnn");
  const bool i = check(want_imitation, paths.imitation, "imitation");
  if (!missing.empty()) {
    std::string msg = "missing model artifact(s):";
    for (const auto& s : missing) msg += " " + s;
    throw ParameterError(msg);
  }
  LoadedModels out;
  if (c) {
    out.cvae = std::make_unique<CvaeModel>(load_cvae(*paths.cvae));
    if (want_joint && !out.cvae->config.joint_gain)
      throw ParameterError("joint gain mode needs a cvae trained with gains: " + paths.cvae->string());
  }
  if (m) {
    out.gain_mlp = std::make_unique<GainModel>(load_gain_model(*paths.gain_mlp));
    if (out.gain_mlp->config.encoder != GainEncoder::pooling)
      throw ParameterError("gain_mlp path holds a cnn gain model: " + paths.gain_mlp->string());
  }
  if (n) {
    out.gain_cnn = std::make_unique<GainModel>(load_gain_model(*paths.gain_cnn));
    if (out.gain_cnn->config.encoder != GainEncoder::cnn)
      throw ParameterError("gain_cnn path holds a pooling gain model: " + paths.gain_cnn->string());
  }
  if (i) out.imitation = std::make_unique<ImitationModel>(load_imitation(*paths.imitation));
  return out;
}

// --- utility on stored maps -------------------------------------------------

UtilitySummary utility_on_records(std::span<const DatasetRecord> records, const PlannerConfig& config,
                                  const PlannerModels& models, std::uint64_t seed) {
  config.validate();
  check_models(config, models);
  UtilitySummary out;
  double util = 0.0, gain = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    r.validate();
    SimState st;
    st.belief = r.local.cells;
    const CellIndex rc = r.local.robot_cell();
    const Vec2 p = st.belief.cell_center(rc);
    st.robot = Pose(p.x, p.y, r.local.robot_yaw);
    st.robot_model = config.robot;
    st.sensor = config.sensor;
    Rng rng(derive_seed(seed, i));
    const PlanResult plan = plan_step(st, config, models, LocalMinimumMonitor{}, rng);
    if (plan.status != PlanStatus::local) continue;
    const LocalMap l = extract_local_map(st.belief, st.robot);
    const int g = compute_gain(l, world_to_local(l, plan.chosen.pose), config.sensor);
    util += g / plan.chosen.cost;
    gain += g;
    out.infeasible_draws += static_cast<std::size_t>(plan.infeasible_draws);
    out.backfilled += static_cast<std::size_t>(plan.backfilled);
    ++out.maps;
  }
  if (out.maps) {
    out.mean_true_utility = util / static_cast<double>(out.maps);
    out.mean_true_gain = gain / static_cast<double>(out.maps);
  }
  return out;
}

}  // namespace nbvlearn
