#include <set>

#include "doctest.h"
#include "geometry_oracles.hpp"
#include "nbvlearn/errors.hpp"
#include "nbvlearn/paths.hpp"

using namespace nbvlearn;
using namespace nbvtest;

namespace {

OccupancyGrid open_room(int n, double res = 0.2) {
  OccupancyGrid g(n, n, res, {}, VoxelState::free);
  for (int i = 0; i < n; ++i) {
    g.set(i, 0, VoxelState::occupied);
    g.set(i, n - 1, VoxelState::occupied);
    g.set(0, i, VoxelState::occupied);
    g.set(n - 1, i, VoxelState::occupied);
  }
  return g;
}

std::set<CellIndex> as_set(const std::vector<CellIndex>& v) { return {v.begin(), v.end()}; }

std::set<CellIndex> oracle_sensed(const OccupancyGrid& gt, const Pose& p, const SensorModel& s) {
  const Vec2 o = gt.to_grid(p.position());
  auto seen = as_set(brute_visible(
      gt, o, s.range_cells(gt.resolution()), p.yaw, 0.5 * s.fov, [](VoxelState) { return true; },
      [](VoxelState v) { return v == VoxelState::occupied; }));
  seen.insert(gt.cell_of(p.position()));
  return seen;
}

void check_sound(const SimState& st) {
  const auto& b = st.belief.cells();
  const auto& g = st.ground_truth->cells();
  std::size_t bad = 0;
  for (std::size_t i = 0; i < b.size(); ++i)
    if (b[i] != VoxelState::unknown && b[i] != g[i]) ++bad;
  CHECK(bad == 0);
}

}  // namespace

TEST_CASE("model validation") {
  RobotModel r;
  CHECK_NOTHROW(r.validate());
  r.v_max = 0.0;
  CHECK_THROWS_AS(r.validate(), ParameterError);
  SensorModel s;
  CHECK_NOTHROW(s.validate());
  s.fov = 7.0;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s = {};
  s.range = -1.0;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s = {};
  s.rays_per_scan = 1;
  CHECK_THROWS_AS(s.validate(), ParameterError);
}

TEST_CASE("pose yaw is normalized") {
  CHECK(Pose(0, 0, 3 * std::numbers::pi).yaw == doctest::Approx(std::numbers::pi));
  CHECK(Pose(0, 0, -std::numbers::pi).yaw == doctest::Approx(std::numbers::pi));
  CHECK(Pose(0, 0, -0.5).yaw == doctest::Approx(-0.5));
  CHECK(angle_diff(-3.0, 3.0) == doctest::Approx(2 * std::numbers::pi - 6.0));
}

TEST_CASE("raycast matches dense point marching") {
  Rng rng(2024);
  int compared = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double res = std::array{0.1, 0.2, 0.5}[rng.uniform_index(3)];
    const int w = 20 + static_cast<int>(rng.uniform_index(30)), h = 20 + static_cast<int>(rng.uniform_index(30));
    OccupancyGrid g(w, h, res, {rng.uniform(-5, 5), rng.uniform(-5, 5)}, VoxelState::free);
    const double p_occ = rng.uniform(0.0, 0.15), p_unk = rng.uniform(0.0, 0.2);
    for (auto& c : g.cells()) {
      const double u = rng.uniform();
      c = u < p_occ ? VoxelState::occupied : (u < p_occ + p_unk ? VoxelState::unknown : VoxelState::free);
    }
    const Vec2 origin = g.to_world({rng.uniform(0.0, w), rng.uniform(0.0, h)});
    const double angle = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double range = rng.uniform(0.0, 1.2 * std::max(w, h) * res);
    const auto mode = rng.bernoulli(0.5) ? RayBlocking::occupied : RayBlocking::occupied_or_unknown;
    const auto got = raycast(g, origin, angle, range, mode);
    const auto want = marched_ray(g, origin, angle, range, mode);
    CHECK(got.cells == want.cells);
    CHECK(got.hit == want.hit);
    ++compared;
  }
  CHECK(compared == 1000);
}

TEST_CASE("raycast visits cells in increasing distance") {
  Rng rng(5);
  const OccupancyGrid g(60, 60, 0.2, {}, VoxelState::free);
  for (int i = 0; i < 200; ++i) {
    const Vec2 o{rng.uniform(0.0, 12.0), rng.uniform(0.0, 12.0)};
    const double a = rng.uniform(-3.14, 3.14);
    const auto r = raycast(g, o, a, 6.0);
    const Vec2 d{std::cos(a), std::sin(a)};
    const Vec2 og = g.to_grid(o);
    // entry parameter of each cell's closed square along the ray
    double last = -1.0;
    for (const auto& c : r.cells) {
      double t0 = -1e300, t1 = 1e300;
      for (int ax = 0; ax < 2; ++ax) {
        const double p = ax ? og.y : og.x, dp = ax ? d.y : d.x, lo = ax ? c.y : c.x;
        if (dp == 0.0) continue;
        double a0 = (lo - p) / dp, a1 = (lo + 1 - p) / dp;
        if (a0 > a1) std::swap(a0, a1);
        t0 = std::max(t0, a0);
        t1 = std::min(t1, a1);
      }
      const double entry = std::max(t0, 0.0);
      CHECK(entry >= last);
      last = entry;
    }
  }
}

TEST_CASE("unobstructed ray reaches its range") {
  const OccupancyGrid g(100, 100, 0.2, {}, VoxelState::free);
  const Vec2 o{10.05, 9.93};
  for (int k = 0; k < 64; ++k) {
    const double a = -std::numbers::pi + 2 * std::numbers::pi * (k + 0.3) / 64;
    const auto r = raycast(g, o, a, 5.0);
    CHECK_FALSE(r.hit.has_value());
    const Vec2 c = g.cell_center(r.cells.back());
    CHECK(std::abs((c - o).norm() - 5.0) <= 0.2 * std::numbers::sqrt2);
  }
}

TEST_CASE("ray stops at a wall") {
  OccupancyGrid g(100, 100, 0.2, {}, VoxelState::free);
  for (int y = 0; y < 100; ++y) g.set(35, y, VoxelState::occupied);  // x in [7.0, 7.2)
  const Vec2 o{5.1, 10.1};
  const auto r = raycast(g, o, 0.0, 5.0);
  REQUIRE(r.hit.has_value());
  CHECK(std::abs(g.cell_center(*r.hit).x - o.x - 2.0) <= 0.2);
  CHECK(r.cells.back() == *r.hit);
  CHECK_THROWS_AS(raycast(g, {-1.0, 1.0}, 0.0, 5.0), ParameterError);
  CHECK_THROWS_AS(raycast(g, o, 0.0, -1.0), ParameterError);

  g.set(30, 50, VoxelState::unknown);  // x in [6.0, 6.2) on the ray
  CHECK(raycast(g, o, 0.0, 5.0).hit == CellIndex{35, 50});
  CHECK(raycast(g, o, 0.0, 5.0, RayBlocking::occupied_or_unknown).hit == CellIndex{30, 50});
}

TEST_CASE("traversal time") {
  RobotModel r;
  CHECK(traversal_time(2.0, 0.0, r) == doctest::Approx(2.0));
  CHECK(traversal_time(0.0, std::numbers::pi, r) == doctest::Approx(std::numbers::pi));
  CHECK(traversal_time(1.0, 3.0, r) == doctest::Approx(3.0));
  CHECK(traversal_time(1.0, -3.0, r) == doctest::Approx(3.0));
  CHECK(traversal_time(1.0, 3.0, r, TimeModel::sequential) == doctest::Approx(4.0));
  r.v_max = 2.0;
  r.omega_max = 0.5;
  CHECK(traversal_time(3.0, 1.0, r) == doctest::Approx(2.0));
  CHECK_THROWS_AS(traversal_time(-0.1, 0.0, r), ParameterError);
}

TEST_CASE("sensing in an unknown open area matches per-cell visibility") {
  auto gt = std::make_shared<const OccupancyGrid>(open_room(100));
  for (double yaw : {0.0, 0.7, -2.2, std::numbers::pi}) {
    const Pose p(10.1, 10.1, yaw);
    SimState st = make_sim_state(gt, p);
    const auto fresh = sense(st);
    CHECK(as_set(fresh).size() == fresh.size());
    CHECK(as_set(fresh) == oracle_sensed(*gt, p, st.sensor));
    CHECK(sense(st).empty());
  }
}

TEST_CASE("exact sensing matches per-cell visibility in cluttered worlds") {
  Rng rng(77);
  for (std::uint64_t s = 0; s < 6; ++s) {
    WorldGenParams wp;
    wp.kind = WorldKind::cluttered;
    wp.seed = s;
    auto gt = std::make_shared<const OccupancyGrid>(generate_world(wp));
    for (int k = 0; k < 4; ++k) {
      Pose p = pick_start_pose(*gt, 0.2, rng);
      p = Pose(p.x + rng.uniform(-0.09, 0.09), p.y + rng.uniform(-0.09, 0.09), p.yaw);
      SensorModel sensor;
      if (k == 3) sensor.fov = 2 * std::numbers::pi;
      SimState st = make_sim_state(gt, p, {}, sensor);
      CHECK(as_set(sense(st)) == oracle_sensed(*gt, p, sensor));
      check_sound(st);
    }
  }
}

TEST_CASE("ray sensing is sound and close to exact sensing") {
  auto gt = std::make_shared<const OccupancyGrid>(open_room(100));
  SensorModel rays;
  rays.mode = SensingMode::rays;
  const Pose p(10.1, 10.1, 0.3);
  SimState a = make_sim_state(gt, p, {}, rays);
  SimState b = make_sim_state(gt, p);
  const auto ra = sense(a);
  const auto rb = sense(b);
  check_sound(a);
  CHECK(static_cast<double>(ra.size()) >= 0.95 * static_cast<double>(rb.size()));
  CHECK(static_cast<double>(ra.size()) <= 1.05 * static_cast<double>(rb.size()));
  CHECK(sense(a).empty());
}

TEST_CASE("sensing from an occupied cell is an integrity error") {
  auto gt = std::make_shared<const OccupancyGrid>(open_room(50));
  SimState st = make_sim_state(gt, Pose(0.1, 0.1, 0.0));
  CHECK_THROWS_AS(sense(st), SimulationError);
  CHECK_THROWS_AS(make_sim_state(nullptr, Pose()), ParameterError);
}

TEST_CASE("local map extraction") {
  OccupancyGrid belief(100, 100, 0.2, {}, VoxelState::unknown);
  SUBCASE("centered, all unknown") {
    const auto l = extract_local_map(belief, Pose(10.1, 10.1, 0.4));
    CHECK(l.size() == 50);
    CHECK(l.cells.count(VoxelState::unknown) == 2500);
    CHECK(l.robot_yaw == doctest::Approx(0.4));
    CHECK(l.extent() == doctest::Approx(2 * SensorModel{}.range));
    CHECK(l.to_global(l.robot_cell()) == belief.cell_of({10.1, 10.1}));
    CHECK(l.cells.cell_of({10.1, 10.1}) == l.robot_cell());
  }
  SUBCASE("near the edge") {
    const auto l = extract_local_map(belief, Pose(0.3, 10.1, 0.0));  // robot cell x = 1
    CHECK(l.robot_cell() == CellIndex{25, 25});
    for (int y = 0; y < 50; ++y)
      for (int x = 0; x < 50; ++x)
        CHECK(l.cells.at(x, y) == (x < 24 ? VoxelState::occupied : VoxelState::unknown));
  }
  SUBCASE("rotation keeps the cells") {
    Rng rng(3);
    for (auto& c : belief.cells()) c = static_cast<VoxelState>(rng.uniform_index(3));
    const auto a = extract_local_map(belief, Pose(7.3, 12.9, 0.0));
    const auto b = extract_local_map(belief, Pose(7.3, 12.9, 2.5));
    CHECK(a.cells == b.cells);
    CHECK(a.robot_yaw != b.robot_yaw);
    for (int y = 0; y < 50; ++y)
      for (int x = 0; x < 50; ++x) CHECK(a.cells.at(x, y) == belief.at(a.to_global({x, y})));
  }
}

TEST_CASE("step accounting") {
  auto gt = std::make_shared<const OccupancyGrid>(open_room(60));
  SimState st = make_sim_state(gt, Pose(3.1, 3.1, 0.0));
  sense(st);
  const CellIndex a = st.belief.cell_of(st.robot.position());

  SUBCASE("null motion") {
    const auto r = step(st, st.robot, {a});
    CHECK(r.duration == 0.0);
    CHECK(st.elapsed_time == 0.0);
    CHECK(st.distance_traveled == 0.0);
    CHECK(r.newly_observed.empty());
  }
  SUBCASE("there and back") {
    std::vector<CellIndex> path;
    for (int i = 0; i <= 5; ++i) path.push_back({a.x + i, a.y});
    const Vec2 bc = st.belief.cell_center(path.back());
    const auto r1 = step(st, Pose(bc.x, bc.y, 0.0), path);
    CHECK(r1.path_length == doctest::Approx(1.0));
    std::reverse(path.begin(), path.end());
    const auto r2 = step(st, Pose(3.1, 3.1, 1.5), path);
    CHECK(st.distance_traveled == doctest::Approx(2.0));
    CHECK(st.elapsed_time == doctest::Approx(1.0 + 1.5));
    CHECK(r2.duration == doctest::Approx(1.5));
  }
  SUBCASE("contract violations") {
    const Vec2 far = st.belief.cell_center({a.x + 2, a.y});
    CHECK_THROWS_AS(step(st, Pose(far.x, far.y, 0), {}), PlanningError);
    CHECK_THROWS_AS(step(st, Pose(far.x, far.y, 0), {a}), PlanningError);
    CHECK_THROWS_AS(step(st, Pose(far.x, far.y, 0), {{a.x + 1, a.y}, {a.x + 2, a.y}}), PlanningError);
    CHECK_THROWS_AS(step(st, Pose(far.x, far.y, 0), {a, {a.x + 2, a.y}}), PlanningError);
    const CellIndex wall{0, a.y};
    const Vec2 wc = st.belief.cell_center(wall);
    std::vector<CellIndex> into_wall;
    for (int x = a.x; x >= 0; --x) into_wall.push_back({x, a.y});
    CHECK_THROWS_AS(step(st, Pose(wc.x, wc.y, 0), into_wall), PlanningError);
    CHECK(st.elapsed_time == 0.0);
  }
}

TEST_CASE("random walk keeps belief sound and accounting exact") {
  WorldGenParams wp;
  wp.seed = 12;
  auto gt = std::make_shared<const OccupancyGrid>(generate_world(wp));
  Rng rng(4);
  SimState st = make_sim_state(gt, pick_start_pose(*gt, 0.2, rng));
  sense(st);
  double sum = 0.0;
  std::size_t known = st.belief.size() - st.belief.count(VoxelState::unknown);
  for (int i = 0; i < 40; ++i) {
    const CellIndex rc = st.belief.cell_of(st.robot.position());
    const auto trav = inflate_obstacles(st.belief, 0.2, true, rc);
    const DistanceField field(trav, rc, st.belief.resolution());
    const auto& cells = field.reachable_cells();
    const CellIndex goal = cells[rng.uniform_index(cells.size())];
    const Vec2 gc = st.belief.cell_center(goal);
    const double before = st.elapsed_time;
    const auto r = step(st, Pose(gc.x, gc.y, rng.uniform(-3, 3)), field.path_to(goal));
    CHECK(r.path_length == doctest::Approx(field.distance(goal)));
    sum += r.duration;
    CHECK(st.elapsed_time >= before);
    CHECK(std::abs(st.elapsed_time - sum) <= 1e-9);
    const std::size_t now = st.belief.size() - st.belief.count(VoxelState::unknown);
    CHECK(now == known + r.newly_observed.size());
    known = now;
    check_sound(st);
  }
}

TEST_CASE("observable cells of an open room") {
  const auto room = open_room(30);
  const auto mask = observable_cells(room, Pose(3.1, 3.1, 0.0), {}, {});
  // the four corners hide behind their neighbors
  CHECK(std::count(mask.begin(), mask.end(), std::uint8_t{1}) == 30 * 30 - 4);
  CHECK(mask[room.index(0, 0)] == 0);
  CHECK(mask[room.index(0, 5)] == 1);
  CHECK_THROWS_AS(observable_cells(room, Pose(0.1, 0.1, 0.0), {}, {}), ParameterError);
}

TEST_CASE("path length") {
  CHECK(path_length({}, 0.2) == 0.0);
  CHECK(path_length({{0, 0}, {1, 1}, {2, 1}}, 0.5) == doctest::Approx(0.5 * (std::numbers::sqrt2 + 1)));
}
