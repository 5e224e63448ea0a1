#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <sstream>

#include "nbvlearn/cli.hpp"
#include "nbvlearn/dataset.hpp"
#include "nbvlearn/errors.hpp"
#include "nbvlearn/eval.hpp"
#include "nbvlearn/grid_world.hpp"
#include "nbvlearn/models.hpp"
#include "nbvlearn/planning.hpp"
#include "nbvlearn/sim.hpp"

namespace py = pybind11;
using namespace nbvlearn;

namespace {

// (height, width) uint8 array, row y first.
py::array_t<std::uint8_t> grid_array(const OccupancyGrid& g) {
  py::array_t<std::uint8_t> a({g.height(), g.width()});
  std::memcpy(a.mutable_data(), g.cells().data(), g.size());
  return a;
}

OccupancyGrid grid_from_array(py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> a,
                              double resolution, Vec2 origin) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
  OccupancyGrid g(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), resolution, origin);
  const auto* p = a.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (p[i] > 2) throw FormatError("invalid cell state " + std::to_string(p[i]));
    g.cells()[i] = static_cast<VoxelState>(p[i]);
  }
  return g;
}

std::string episode_jsonl(const EpisodeLog& log, bool timing) {
  std::ostringstream os;
  log.write_jsonl(os, timing);
  return os.str();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Exploration planning with learned viewpoint sampling";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  py::enum_<VoxelState>(m, "VoxelState")
      .value("free", VoxelState::free)
      .value("occupied", VoxelState::occupied)
      .value("unknown", VoxelState::unknown);
  py::enum_<WorldKind>(m, "WorldKind").value("maze", WorldKind::maze).value("cluttered", WorldKind::cluttered);
  py::enum_<SamplerKind>(m, "SamplerKind")
      .value("uniform", SamplerKind::uniform)
      .value("cvae", SamplerKind::cvae)
      .value("imitation", SamplerKind::imitation);
  py::enum_<GainMode>(m, "GainMode")
      .value("raycast", GainMode::raycast)
      .value("learned_mlp", GainMode::learned_mlp)
      .value("learned_cnn", GainMode::learned_cnn)
      .value("joint", GainMode::joint);
  py::enum_<RayBlocking>(m, "RayBlocking")
      .value("occupied", RayBlocking::occupied)
      .value("occupied_or_unknown", RayBlocking::occupied_or_unknown);

  py::class_<Pose>(m, "Pose")
      .def(py::init<>())
      .def(py::init<double, double, double>(), py::arg("x"), py::arg("y"), py::arg("yaw") = 0.0)
      .def_readwrite("x", &Pose::x)
      .def_readwrite("y", &Pose::y)
      .def_readwrite("yaw", &Pose::yaw)
      .def("__eq__", [](const Pose& a, const Pose& b) { return a == b; })
      .def("__repr__", [](const Pose& p) {
        std::ostringstream os;
        os << "Pose(" << p.x << ", " << p.y << ", " << p.yaw << ")";
        return os.str();
      });

  py::class_<OccupancyGrid>(m, "OccupancyGrid")
      .def(py::init([](int w, int h, double res, double ox, double oy, VoxelState fill) {
             return OccupancyGrid(w, h, res, {ox, oy}, fill);
           }),
           py::arg("width"), py::arg("height"), py::arg("resolution") = 0.2, py::arg("origin_x") = 0.0,
           py::arg("origin_y") = 0.0, py::arg("fill") = VoxelState::unknown)
      .def_static(
          "from_array",
          [](py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast> a, double res, double ox,
             double oy) { return grid_from_array(a, res, {ox, oy}); },
          py::arg("cells"), py::arg("resolution") = 0.2, py::arg("origin_x") = 0.0, py::arg("origin_y") = 0.0)
      .def_property_readonly("width", &OccupancyGrid::width)
      .def_property_readonly("height", &OccupancyGrid::height)
      .def_property_readonly("resolution", &OccupancyGrid::resolution)
      .def_property_readonly("origin", [](const OccupancyGrid& g) { return py::make_tuple(g.origin().x, g.origin().y); })
      .def("at", [](const OccupancyGrid& g, int x, int y) { return g.at(x, y); })
      .def("set", [](OccupancyGrid& g, int x, int y, VoxelState s) { g.set(x, y, s); })
      .def("count", &OccupancyGrid::count)
      .def("cell_of", [](const OccupancyGrid& g, double x, double y) {
        const auto c = g.cell_of({x, y});
        return py::make_tuple(c.x, c.y);
      })
      .def("to_array", &grid_array, "Cells as a (height, width) uint8 array: 0 free, 1 occupied, 2 unknown")
      .def("__eq__", [](const OccupancyGrid& a, const OccupancyGrid& b) { return a == b; });

  py::class_<WorldGenParams>(m, "WorldGenParams")
      .def(py::init<>())
      .def_readwrite("seed", &WorldGenParams::seed)
      .def_readwrite("kind", &WorldGenParams::kind)
      .def_readwrite("side_length_m", &WorldGenParams::side_length_m)
      .def_readwrite("resolution", &WorldGenParams::resolution)
      .def_readwrite("corridor_width_m", &WorldGenParams::corridor_width_m)
      .def_readwrite("wall_thickness_m", &WorldGenParams::wall_thickness_m)
      .def_readwrite("loop_fraction", &WorldGenParams::loop_fraction)
      .def_readwrite("obstacle_count", &WorldGenParams::obstacle_count)
      .def_readwrite("obstacle_size_min_m", &WorldGenParams::obstacle_size_min_m)
      .def_readwrite("obstacle_size_max_m", &WorldGenParams::obstacle_size_max_m)
      .def_readwrite("start_pose", &WorldGenParams::start_pose);

  m.def("generate_world", &generate_world, py::arg("params"));
  m.def(
      "pick_start_pose",
      [](const OccupancyGrid& g, double clearance, std::uint64_t seed) {
        Rng rng(seed);
        return pick_start_pose(g, clearance, rng);
      },
      py::arg("grid"), py::arg("clearance_m") = 0.2, py::arg("seed") = 0);
  m.def("save_world", &save_world, py::arg("grid"), py::arg("path"));
  m.def("load_world", &load_world, py::arg("path"));

  py::class_<RobotModel>(m, "RobotModel")
      .def(py::init<>())
      .def_readwrite("v_max", &RobotModel::v_max)
      .def_readwrite("omega_max", &RobotModel::omega_max)
      .def_readwrite("footprint_radius", &RobotModel::footprint_radius);
  py::class_<SensorModel>(m, "SensorModel")
      .def(py::init<>())
      .def_readwrite("fov", &SensorModel::fov)
      .def_readwrite("range", &SensorModel::range)
      .def_readwrite("rays_per_scan", &SensorModel::rays_per_scan);

  m.def(
      "raycast",
      [](const OccupancyGrid& g, double x, double y, double angle, double max_range, RayBlocking blocking) {
        const auto r = raycast(g, {x, y}, angle, max_range, blocking);
        std::vector<std::pair<int, int>> cells;
        for (const auto& c : r.cells) cells.emplace_back(c.x, c.y);
        std::optional<std::pair<int, int>> hit;
        if (r.hit) hit = std::pair{r.hit->x, r.hit->y};
        return py::make_tuple(cells, hit);
      },
      py::arg("grid"), py::arg("x"), py::arg("y"), py::arg("angle"), py::arg("max_range"),
      py::arg("blocking") = RayBlocking::occupied,
      "Traversed cells in order and the hit cell (or None)");

  py::class_<LocalMap>(m, "LocalMap")
      .def_readonly("cells", &LocalMap::cells)
      .def_readonly("robot_yaw", &LocalMap::robot_yaw)
      .def_property_readonly("offset", [](const LocalMap& l) { return py::make_tuple(l.offset.x, l.offset.y); });

  py::class_<SimState>(m, "SimState")
      .def(py::init([](const OccupancyGrid& world, const Pose& start, const RobotModel& robot,
                       const SensorModel& sensor) {
             auto s = make_sim_state(std::make_shared<const OccupancyGrid>(world), start, robot, sensor);
             sense(s);
             return s;
           }),
           py::arg("world"), py::arg("start"), py::arg("robot") = RobotModel{}, py::arg("sensor") = SensorModel{},
           "Fresh state, sensed once from the start pose")
      .def_readonly("belief", &SimState::belief)
      .def_readonly("robot", &SimState::robot)
      .def_readonly("elapsed_time", &SimState::elapsed_time)
      .def_readonly("distance_traveled", &SimState::distance_traveled)
      .def("local_map", [](const SimState& s) { return extract_local_map(s.belief, s.robot); });

  m.def("compute_gain", &compute_gain, py::arg("local"), py::arg("pose"), py::arg("sensor") = SensorModel{},
        "Unknown cells visible from a local-frame pose");

  py::class_<PlannerConfig>(m, "PlannerConfig")
      .def(py::init<>())
      .def_readwrite("n_samples", &PlannerConfig::n_samples)
      .def_readwrite("sampler", &PlannerConfig::sampler)
      .def_readwrite("gain_mode", &PlannerConfig::gain_mode)
      .def_readwrite("yaw_bins", &PlannerConfig::yaw_bins)
      .def_readwrite("max_resample_attempts", &PlannerConfig::max_resample_attempts)
      .def_readwrite("robot", &PlannerConfig::robot)
      .def_readwrite("sensor", &PlannerConfig::sensor);

  py::class_<LoadedModels>(m, "Models")
      .def(py::init([](std::optional<std::filesystem::path> cvae, std::optional<std::filesystem::path> gain_mlp,
                       std::optional<std::filesystem::path> gain_cnn, std::optional<std::filesystem::path> imitation) {
             ModelPaths paths{cvae, gain_mlp, gain_cnn, imitation};
             std::vector<PlannerConfig> needed;
             auto need = [&](bool present, SamplerKind s, GainMode g) {
               if (!present) return;
               PlannerConfig c;
               c.sampler = s;
               c.gain_mode = g;
               needed.push_back(c);
             };
             need(cvae.has_value(), SamplerKind::cvae, GainMode::raycast);
             need(gain_mlp.has_value(), SamplerKind::uniform, GainMode::learned_mlp);
             need(gain_cnn.has_value(), SamplerKind::uniform, GainMode::learned_cnn);
             need(imitation.has_value(), SamplerKind::imitation, GainMode::raycast);
             return load_models(paths, needed);
           }),
           py::arg("cvae") = py::none(), py::arg("gain_mlp") = py::none(), py::arg("gain_cnn") = py::none(),
           py::arg("imitation") = py::none());

  py::class_<EpisodeConfig>(m, "EpisodeConfig")
      .def(py::init<>())
      .def_readwrite("planner", &EpisodeConfig::planner)
      .def_readwrite("step_budget", &EpisodeConfig::step_budget)
      .def_readwrite("completion_coverage", &EpisodeConfig::completion_coverage)
      .def_readwrite("stop_coverage", &EpisodeConfig::stop_coverage)
      .def_readwrite("monitor_threshold", &EpisodeConfig::monitor_threshold);

  py::class_<EpisodeLog>(m, "EpisodeLog")
      .def_readonly("seed", &EpisodeLog::seed)
      .def_readonly("observable_cells", &EpisodeLog::observable_cells)
      .def_property_readonly("status", [](const EpisodeLog& l) { return to_string(l.status); })
      .def_property_readonly("steps", [](const EpisodeLog& l) { return l.steps.size(); })
      .def_property_readonly("final_coverage", &EpisodeLog::final_coverage)
      .def_property_readonly("sim_time", &EpisodeLog::sim_time)
      .def_property_readonly("distance", &EpisodeLog::distance)
      .def_property_readonly("coverage", [](const EpisodeLog& l) {
        std::vector<double> v;
        for (const auto& s : l.steps) v.push_back(s.coverage);
        return v;
      })
      .def("time_to_coverage", &EpisodeLog::time_to_coverage, py::arg("coverage"))
      .def("objective", &EpisodeLog::objective, py::arg("gamma") = 1.0)
      .def("to_jsonl", &episode_jsonl, py::arg("timing") = true);

  m.def(
      "run_episode",
      [](const OccupancyGrid& world, const Pose& start, const EpisodeConfig& config, const LoadedModels* models,
         std::uint64_t seed) {
        const PlannerModels view = models ? models->view() : PlannerModels{};
        py::gil_scoped_release release;
        return run_episode(world, start, config, view, seed);
      },
      py::arg("world"), py::arg("start"), py::arg("config") = EpisodeConfig{}, py::arg("models") = nullptr,
      py::arg("seed") = 0);

  m.def(
      "collect_dataset",
      [](const std::filesystem::path& out, int worlds, std::uint64_t seed, int threads, double side_length_m) {
        CollectOptions o;
        o.worlds = worlds;
        o.seed = seed;
        o.threads = threads;
        o.world.side_length_m = side_length_m;
        py::gil_scoped_release release;
        collect_dataset(o, out);
      },
      py::arg("out"), py::arg("worlds") = 10, py::arg("seed") = 0, py::arg("threads") = 0,
      py::arg("side_length_m") = 20.0, "Teacher data on maze worlds");
  m.def(
      "dataset_meta", [](const std::filesystem::path& p) { return read_dataset_meta(p).to_json(); }, py::arg("path"),
      "Meta block as a JSON string");

  m.def(
      "run_benchmark",
      [](const std::string& config_json, const std::filesystem::path& base_dir, bool timing) {
        const auto cfg = BenchmarkConfig::from_json(config_json, base_dir);
        BenchmarkResult r;
        {
          py::gil_scoped_release release;
          r = run_benchmark(cfg);
        }
        std::ostringstream os;
        write_benchmark_csv(r, os, timing);
        return os.str();
      },
      py::arg("config_json"), py::arg("base_dir") = std::filesystem::path{}, py::arg("timing") = true,
      "Runs a benchmark configuration and returns the CSV table");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli_main(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process: (exit code, stdout, stderr)");
}
