#pragma once

// JSON (de)serialization of the configuration structs. Missing keys keep
// their defaults; unknown keys are rejected so typos surface.

#include <initializer_list>
#include <string>

#include "json.hpp"
#include "nbvlearn/dataset.hpp"
#include "nbvlearn/errors.hpp"
#include "nbvlearn/planning.hpp"

namespace nbvlearn {

using nlohmann::json;

namespace cfg {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ParameterError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok |= it.key() == k;
    if (!ok) throw ParameterError(where + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
void get(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParameterError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace cfg

inline void to_json(json& j, const RobotModel& r) {
  j = json{{"v_max", r.v_max}, {"omega_max", r.omega_max}, {"footprint_radius", r.footprint_radius}};
}
inline void from_json(const json& j, RobotModel& r) {
  cfg::check_keys(j, {"v_max", "omega_max", "footprint_radius"}, "robot");
  cfg::get(j, "v_max", r.v_max);
  cfg::get(j, "omega_max", r.omega_max);
  cfg::get(j, "footprint_radius", r.footprint_radius);
}

inline void to_json(json& j, const SensorModel& s) {
  j = json{{"fov", s.fov},
           {"range", s.range},
           {"rays_per_scan", s.rays_per_scan},
           {"mode", s.mode == SensingMode::exact ? "exact" : "rays"}};
}
inline void from_json(const json& j, SensorModel& s) {
  cfg::check_keys(j, {"fov", "range", "rays_per_scan", "mode"}, "sensor");
  cfg::get(j, "fov", s.fov);
  cfg::get(j, "range", s.range);
  cfg::get(j, "rays_per_scan", s.rays_per_scan);
  if (j.contains("mode")) {
    const auto m = j.at("mode").get<std::string>();
    if (m == "exact") s.mode = SensingMode::exact;
    else if (m == "rays") s.mode = SensingMode::rays;
    else throw ParameterError("sensor.mode must be 'exact' or 'rays', got '" + m + "'");
  }
}

inline void to_json(json& j, const TeacherConfig& t) {
  j = json{{"n_candidates", t.n_candidates}, {"repetitions", t.repetitions}, {"record_stride", t.record_stride},
           {"max_records", t.max_records},   {"step_budget", t.step_budget}, {"yaw_bins", t.yaw_bins},
           {"robot", t.robot},               {"sensor", t.sensor}};
}
inline void from_json(const json& j, TeacherConfig& t) {
  cfg::check_keys(j,
                  {"n_candidates", "repetitions", "record_stride", "max_records", "step_budget", "yaw_bins",
                   "robot", "sensor"},
                  "teacher");
  cfg::get(j, "n_candidates", t.n_candidates);
  cfg::get(j, "repetitions", t.repetitions);
  cfg::get(j, "record_stride", t.record_stride);
  cfg::get(j, "max_records", t.max_records);
  cfg::get(j, "step_budget", t.step_budget);
  cfg::get(j, "yaw_bins", t.yaw_bins);
  if (j.contains("robot")) from_json(j.at("robot"), t.robot);
  if (j.contains("sensor")) from_json(j.at("sensor"), t.sensor);
}

inline std::string to_string(WorldKind k) { return k == WorldKind::maze ? "maze" : "cluttered"; }
inline WorldKind parse_world_kind(const std::string& s) {
  if (s == "maze") return WorldKind::maze;
  if (s == "cluttered") return WorldKind::cluttered;
  throw ParameterError("unknown world kind '" + s + "' (expected maze or cluttered)");
}

inline void to_json(json& j, const WorldGenParams& p) {
  j = json{{"seed", p.seed},
           {"kind", to_string(p.kind)},
           {"side_length_m", p.side_length_m},
           {"resolution", p.resolution},
           {"corridor_width_m", p.corridor_width_m},
           {"wall_thickness_m", p.wall_thickness_m},
           {"loop_fraction", p.loop_fraction},
           {"obstacle_size_min_m", p.obstacle_size_min_m},
           {"obstacle_size_max_m", p.obstacle_size_max_m}};
  if (p.obstacle_count) j["obstacle_count"] = *p.obstacle_count;
}
inline void from_json(const json& j, WorldGenParams& p) {
  cfg::check_keys(j,
                  {"seed", "kind", "side_length_m", "resolution", "corridor_width_m", "wall_thickness_m",
                   "loop_fraction", "obstacle_count", "obstacle_size_min_m", "obstacle_size_max_m"},
                  "world");
  cfg::get(j, "seed", p.seed);
  if (j.contains("kind")) p.kind = parse_world_kind(j.at("kind").get<std::string>());
  cfg::get(j, "side_length_m", p.side_length_m);
  cfg::get(j, "resolution", p.resolution);
  cfg::get(j, "corridor_width_m", p.corridor_width_m);
  cfg::get(j, "wall_thickness_m", p.wall_thickness_m);
  cfg::get(j, "loop_fraction", p.loop_fraction);
  if (j.contains("obstacle_count")) p.obstacle_count = j.at("obstacle_count").get<int>();
  cfg::get(j, "obstacle_size_min_m", p.obstacle_size_min_m);
  cfg::get(j, "obstacle_size_max_m", p.obstacle_size_max_m);
}

}  // namespace nbvlearn
