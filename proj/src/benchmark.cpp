#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "json_config.hpp"
#include "nbvlearn/errors.hpp"
#include "nbvlearn/eval.hpp"

namespace nbvlearn {

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("bad number '" + s + "' in " + what);
  return v;
}

std::string target_label(double t) {
  std::ostringstream os;
  os.precision(6);
  os << t * 100.0;
  return os.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

// --- config -----------------------------------------------------------------

void BenchmarkConfig::validate() const {
  if (variants.empty()) throw ParameterError("benchmark needs at least one variant");
  for (const auto& v : variants) {
    if (v.name.empty() || v.name.find_first_of(",\n\"") != std::string::npos)
      throw ParameterError("variant names must be non-empty and free of commas and quotes");
    if (v.n_samples.empty()) throw ParameterError("variant " + v.name + " has no N values");
    for (int n : v.n_samples)
      if (n < 1) throw ParameterError("variant " + v.name + ": N must be >= 1");
  }
  if (worlds.files.empty() && worlds.count < 1) throw ParameterError("benchmark needs at least one world");
  if (starts_per_world < 1) throw ParameterError("starts_per_world must be >= 1");
  if (repeats < 1) throw ParameterError("repeats must be >= 1");
  if (step_budget < 1) throw ParameterError("step_budget must be >= 1");
  if (coverage_targets.empty()) throw ParameterError("at least one coverage target is required");
  for (double t : coverage_targets)
    if (!(t > 0.0 && t <= 1.0)) throw ParameterError("coverage targets must be in (0, 1]");
  if (!(gamma >= 0.0)) throw ParameterError("gamma must be >= 0");
  if (threads < 0) throw ParameterError("threads must be >= 0");
  robot.validate();
  sensor.validate();
}

BenchmarkConfig BenchmarkConfig::from_json(const std::string& text, const std::filesystem::path& base_dir) {
  BenchmarkConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParameterError(std::string("benchmark config is not valid JSON: ") + e.what());
  }
  cfg::check_keys(j,
                  {"variants", "worlds", "starts_per_world", "repeats", "step_budget", "coverage_targets", "gamma",
                   "completion_coverage", "stop_coverage", "seed", "threads", "parallel_scoring", "yaw_bins",
                   "robot", "sensor", "models", "episode_dir"},
                  "benchmark");
  if (j.contains("variants")) {
    for (const auto& v : j.at("variants")) {
      cfg::check_keys(v, {"name", "sampler", "gain_mode", "n"}, "variant");
      VariantSpec s;
      if (v.contains("sampler")) s.sampler = parse_sampler(v.at("sampler").get<std::string>());
      if (v.contains("gain_mode")) s.gain_mode = parse_gain_mode(v.at("gain_mode").get<std::string>());
      s.name = v.value("name", to_string(s.sampler) + "-" + to_string(s.gain_mode));
      if (v.contains("n")) {
        s.n_samples.clear();
        if (v.at("n").is_array()) s.n_samples = v.at("n").get<std::vector<int>>();
        else s.n_samples.push_back(v.at("n").get<int>());
      }
      c.variants.push_back(s);
    }
  }
  if (j.contains("worlds")) {
    const auto& w = j.at("worlds");
    cfg::check_keys(w, {"files", "count", "seed", "params"}, "worlds");
    if (w.contains("files"))
      for (const auto& f : w.at("files")) c.worlds.files.push_back(resolve(base_dir, f.get<std::string>()));
    cfg::get(w, "count", c.worlds.count);
    cfg::get(w, "seed", c.worlds.seed);
    if (w.contains("params")) nbvlearn::from_json(w.at("params"), c.worlds.params);
  }
  cfg::get(j, "starts_per_world", c.starts_per_world);
  cfg::get(j, "repeats", c.repeats);
  cfg::get(j, "step_budget", c.step_budget);
  cfg::get(j, "coverage_targets", c.coverage_targets);
  cfg::get(j, "gamma", c.gamma);
  cfg::get(j, "completion_coverage", c.completion_coverage);
  cfg::get(j, "stop_coverage", c.stop_coverage);
  cfg::get(j, "seed", c.seed);
  cfg::get(j, "threads", c.threads);
  cfg::get(j, "parallel_scoring", c.parallel_scoring);
  cfg::get(j, "yaw_bins", c.yaw_bins);
  if (j.contains("robot")) nbvlearn::from_json(j.at("robot"), c.robot);
  if (j.contains("sensor")) nbvlearn::from_json(j.at("sensor"), c.sensor);
  if (j.contains("models")) {
    const auto& m = j.at("models");
    cfg::check_keys(m, {"cvae", "gain_mlp", "gain_cnn", "imitation"}, "models");
    auto opt = [&](const char* k, std::optional<std::filesystem::path>& out) {
      if (m.contains(k) && !m.at(k).is_null()) out = resolve(base_dir, m.at(k).get<std::string>());
    };
    opt("cvae", c.models.cvae);
    opt("gain_mlp", c.models.gain_mlp);
    opt("gain_cnn", c.models.gain_cnn);
    opt("imitation", c.models.imitation);
  }
  if (j.contains("episode_dir")) c.episode_dir = resolve(base_dir, j.at("episode_dir").get<std::string>());
  c.validate();
  return c;
}

std::string BenchmarkConfig::to_json() const {
  json j;
  for (const auto& v : variants)
    j["variants"].push_back(
        {{"name", v.name}, {"sampler", to_string(v.sampler)}, {"gain_mode", to_string(v.gain_mode)}, {"n", v.n_samples}});
  json w{{"count", worlds.count}, {"seed", worlds.seed}, {"params", worlds.params}};
  for (const auto& f : worlds.files) w["files"].push_back(f.string());
  j["worlds"] = w;
  j["starts_per_world"] = starts_per_world;
  j["repeats"] = repeats;
  j["step_budget"] = step_budget;
  j["coverage_targets"] = coverage_targets;
  j["gamma"] = gamma;
  j["completion_coverage"] = completion_coverage;
  j["stop_coverage"] = stop_coverage;
  j["seed"] = seed;
  j["threads"] = threads;
  j["parallel_scoring"] = parallel_scoring;
  j["yaw_bins"] = yaw_bins;
  j["robot"] = robot;
  j["sensor"] = sensor;
  json m = json::object();
  if (models.cvae) m["cvae"] = models.cvae->string();
  if (models.gain_mlp) m["gain_mlp"] = models.gain_mlp->string();
  if (models.gain_cnn) m["gain_cnn"] = models.gain_cnn->string();
  if (models.imitation) m["imitation"] = models.imitation->string();
  j["models"] = m;
  if (episode_dir) j["episode_dir"] = episode_dir->string();
  return j.dump(2);
}

BenchmarkConfig load_benchmark_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read benchmark config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return BenchmarkConfig::from_json(ss.str(), path.parent_path());
}

// --- runner -----------------------------------------------------------------

BenchmarkResult run_benchmark(const BenchmarkConfig& config) {
  config.validate();

  struct Job {
    std::size_t row;
    PlannerConfig planner;
    std::size_t world;
    int start;
    int repeat;
  };
  std::vector<PlannerConfig> needed;
  std::vector<Job> jobs;
  BenchmarkResult result;
  result.coverage_targets = config.coverage_targets;

  std::vector<OccupancyGrid> worlds;
  if (!config.worlds.files.empty()) {
    for (const auto& f : config.worlds.files) worlds.push_back(load_world(f));
  } else {
    for (int i = 0; i < config.worlds.count; ++i) {
      WorldGenParams p = config.worlds.params;
      p.seed = derive_seed(config.worlds.seed, static_cast<std::uint64_t>(i));
      worlds.push_back(generate_world(p));
    }
  }

  for (const auto& v : config.variants)
    for (int n : v.n_samples) {
      PlannerConfig pc;
      pc.n_samples = n;
      pc.sampler = v.sampler;
      pc.gain_mode = v.gain_mode;
      pc.yaw_bins = config.yaw_bins;
      pc.parallel_scoring = config.parallel_scoring;
      pc.robot = config.robot;
      pc.sensor = config.sensor;
      pc.validate();
      needed.push_back(pc);
      BenchmarkRow row;
      row.variant = v.name;
      row.sampler = v.sampler;
      row.gain_mode = v.gain_mode;
      row.n = n;
      result.rows.push_back(row);
      for (std::size_t w = 0; w < worlds.size(); ++w)
        for (int s = 0; s < config.starts_per_world; ++s)
          for (int r = 0; r < config.repeats; ++r) jobs.push_back({result.rows.size() - 1, pc, w, s, r});
    }
  const LoadedModels models = load_models(config.models, needed);
  const PlannerModels view = models.view();

  // Start poses and observable masks depend only on (world, start).
  std::vector<std::vector<Pose>> starts(worlds.size());
  std::vector<std::vector<std::vector<std::uint8_t>>> masks(worlds.size());
  for (std::size_t w = 0; w < worlds.size(); ++w) {
    Rng rng(derive_seed(config.seed, 0x5747 + w));
    for (int s = 0; s < config.starts_per_world; ++s) {
      starts[w].push_back(pick_start_pose(worlds[w], config.robot.footprint_radius, rng));
      masks[w].push_back(observable_cells(worlds[w], starts[w].back(), config.robot, config.sensor));
    }
  }
  if (config.episode_dir) std::filesystem::create_directories(*config.episode_dir);

  std::vector<EpisodeLog> logs(jobs.size());
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      std::size_t k;
      {
        std::lock_guard lock(mu);
        if (failure || next >= jobs.size()) return;
        k = next++;
      }
      try {
        const Job& job = jobs[k];
        EpisodeConfig ec;
        ec.planner = job.planner;
        ec.step_budget = config.step_budget;
        ec.completion_coverage = config.completion_coverage;
        ec.stop_coverage = config.stop_coverage;
        // Identical seeds across variants: every variant sees the same starts and streams.
        const std::uint64_t seed =
            derive_seed(derive_seed(config.seed, job.world * 1000 + static_cast<std::size_t>(job.start)),
                        static_cast<std::uint64_t>(job.repeat));
        logs[k] = run_episode(worlds[job.world], starts[job.world][static_cast<std::size_t>(job.start)], ec, view,
                              seed, &masks[job.world][static_cast<std::size_t>(job.start)]);
        if (config.episode_dir) {
          const auto& row = result.rows[job.row];
          const auto name = row.variant + "_n" + std::to_string(row.n) + "_w" + std::to_string(job.world) + "_s" +
                            std::to_string(job.start) + "_r" + std::to_string(job.repeat) + ".jsonl";
          std::ofstream os(*config.episode_dir / name);
          logs[k].write_jsonl(os);
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(config.threads > 0 ? config.threads : static_cast<int>(std::thread::hardware_concurrency()),
                                 1, static_cast<int>(std::max<std::size_t>(jobs.size(), 1)));
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  // Aggregate in job order so the table does not depend on scheduling.
  for (std::size_t r = 0; r < result.rows.size(); ++r) {
    auto& row = result.rows[r];
    std::vector<std::vector<double>> times(config.coverage_targets.size());
    std::vector<double> dist, cov, steps, ep_compute, objective, util;
    double compute_sum = 0.0;
    std::size_t step_count = 0;
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      if (jobs[k].row != r) continue;
      const auto& log = logs[k];
      ++row.episodes;
      if (log.status == EpisodeStatus::complete) ++row.completed;
      for (std::size_t t = 0; t < config.coverage_targets.size(); ++t)
        if (auto tt = log.time_to_coverage(config.coverage_targets[t])) times[t].push_back(*tt);
      dist.push_back(log.distance());
      cov.push_back(log.final_coverage());
      steps.push_back(static_cast<double>(log.steps.size()));
      ep_compute.push_back(log.total_compute());
      objective.push_back(log.objective(config.gamma));
      compute_sum += log.total_compute();
      step_count += log.steps.size();
      for (const auto& s : log.steps)
        if (!s.global_planner) util.push_back(s.true_utility());
    }
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    for (std::size_t t = 0; t < times.size(); ++t)
      row.times.push_back({config.coverage_targets[t], times[t].size(), mean(times[t]), stddev(times[t])});
    row.mean_distance = mean(dist);
    row.std_distance = stddev(dist);
    row.mean_final_coverage = mean(cov);
    row.mean_steps = mean(steps);
    row.mean_step_compute = step_count ? compute_sum / static_cast<double>(step_count) : 0.0;
    row.mean_episode_compute = mean(ep_compute);
    row.mean_objective = mean(objective);
    row.std_objective = stddev(objective);
    row.mean_true_utility = mean(util);
  }
  return result;
}

// --- CSV --------------------------------------------------------------------

void write_benchmark_csv(const BenchmarkResult& result, std::ostream& os, bool timing) {
  os << "schema,variant,sampler,gain_mode,n,episodes,completed";
  for (double t : result.coverage_targets) {
    const auto l = target_label(t);
    os << ",reached_" << l << ",mean_time_" << l << ",std_time_" << l;
  }
  os << ",mean_distance,std_distance,mean_final_coverage,mean_steps,mean_step_compute_s,mean_episode_compute_s,"
        "mean_objective,std_objective,mean_true_utility\n";
  auto timed = [&](double v) { return timing ? fmt(v) : std::string(); };
  for (const auto& r : result.rows) {
    os << kBenchmarkCsvVersion << ',' << r.variant << ',' << to_string(r.sampler) << ',' << to_string(r.gain_mode) << ','
       << r.n << ',' << r.episodes << ',' << r.completed;
    for (const auto& t : r.times) {
      os << ',' << t.reached << ',';
      if (t.reached) os << fmt(t.mean) << ',' << fmt(t.std);
      else os << ',';
    }
    os << ',' << fmt(r.mean_distance) << ',' << fmt(r.std_distance) << ',' << fmt(r.mean_final_coverage) << ','
       << fmt(r.mean_steps) << ',' << timed(r.mean_step_compute) << ',' << timed(r.mean_episode_compute) << ','
       << timed(r.mean_objective) << ',' << timed(r.std_objective) << ',' << fmt(r.mean_true_utility) << '\n';
  }
}

BenchmarkResult read_benchmark_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("benchmark csv is empty");
  const auto header = split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* k : {"schema", "variant", "sampler", "gain_mode", "n", "episodes", "completed", "mean_distance",
                        "std_distance", "mean_final_coverage", "mean_steps", "mean_step_compute_s",
                        "mean_episode_compute_s", "mean_objective", "std_objective", "mean_true_utility"})
    if (!col.count(k)) throw FormatError(std::string("benchmark csv lacks column '") + k + "'");
  BenchmarkResult res;
  std::vector<std::string> labels;
  for (const auto& h : header)
    if (h.rfind("mean_time_", 0) == 0) {
      labels.push_back(h.substr(10));
      res.coverage_targets.push_back(parse_double(labels.back(), "column " + h) / 100.0);
    }
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = "benchmark csv line " + std::to_string(lineno);
    if (f.size() != header.size()) throw FormatError(where + ": expected " + std::to_string(header.size()) + " fields");
    auto num = [&](const char* k) {
      const auto& s = f[col.at(k)];
      return s.empty() ? 0.0 : parse_double(s, where);
    };
    if (static_cast<int>(num("schema")) != kBenchmarkCsvVersion)
      throw VersionError(where, kBenchmarkCsvVersion, static_cast<unsigned>(num("schema")));
    BenchmarkRow r;
    r.variant = f[col.at("variant")];
    r.sampler = parse_sampler(f[col.at("sampler")]);
    r.gain_mode = parse_gain_mode(f[col.at("gain_mode")]);
    r.n = static_cast<int>(num("n"));
    r.episodes = static_cast<std::size_t>(num("episodes"));
    r.completed = static_cast<std::size_t>(num("completed"));
    for (std::size_t t = 0; t < labels.size(); ++t) {
      TargetStats ts;
      ts.target = res.coverage_targets[t];
      const auto& reached = f[col.at("reached_" + labels[t])];
      ts.reached = reached.empty() ? 0 : static_cast<std::size_t>(parse_double(reached, where));
      const auto& m = f[col.at("mean_time_" + labels[t])];
      const auto& s = f[col.at("std_time_" + labels[t])];
      if (!m.empty()) ts.mean = parse_double(m, where);
      if (!s.empty()) ts.std = parse_double(s, where);
      r.times.push_back(ts);
    }
    r.mean_distance = num("mean_distance");
    r.std_distance = num("std_distance");
    r.mean_final_coverage = num("mean_final_coverage");
    r.mean_steps = num("mean_steps");
    r.mean_step_compute = num("mean_step_compute_s");
    r.mean_episode_compute = num("mean_episode_compute_s");
    r.mean_objective = num("mean_objective");
    r.std_objective = num("std_objective");
    r.mean_true_utility = num("mean_true_utility");
    res.rows.push_back(r);
  }
  return res;
}

// --- pareto -----------------------------------------------------------------

ParetoReport pareto_report(const BenchmarkResult& result, double target) {
  ParetoReport rep;
  rep.target = target;
  std::size_t ti = result.coverage_targets.size();
  for (std::size_t t = 0; t < result.coverage_targets.size(); ++t)
    if (std::abs(result.coverage_targets[t] - target) < 1e-9) ti = t;
  if (ti == result.coverage_targets.size())
    throw DataError("benchmark results have no " + target_label(target) + "% coverage column");
  for (const auto& r : result.rows) {
    if (r.times.size() <= ti || r.times[ti].reached == 0) {
      rep.excluded.push_back(r.variant + " N=" + std::to_string(r.n));
      continue;
    }
    rep.points.push_back({r.variant, r.n, r.times[ti].mean, r.mean_episode_compute, r.mean_step_compute, false});
  }
  for (auto& p : rep.points) {
    bool dominated = false;
    for (const auto& q : rep.points) {
      if (&p == &q) continue;
      if (q.performance <= p.performance && q.episode_compute <= p.episode_compute &&
          (q.performance < p.performance || q.episode_compute < p.episode_compute))
        dominated = true;
    }
    p.pareto = !dominated;
  }
  std::map<std::string, std::vector<const ParetoPoint*>> by_variant;
  std::vector<std::string> order;
  for (const auto& p : rep.points) {
    if (!by_variant.count(p.variant)) order.push_back(p.variant);
    by_variant[p.variant].push_back(&p);
  }
  auto trend = [](std::vector<double> v) {
    bool up = true, down = true;
    for (std::size_t i = 1; i < v.size(); ++i) {
      up &= v[i] >= v[i - 1];
      down &= v[i] <= v[i - 1];
    }
    if (v.size() < 2) return 0;
    return up && !down ? 1 : (down && !up ? -1 : 0);
  };
  for (const auto& name : order) {
    auto pts = by_variant[name];
    std::stable_sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->n < b->n; });
    std::vector<double> perf, comp;
    for (auto* p : pts) {
      perf.push_back(p->performance);
      comp.push_back(p->episode_compute);
    }
    rep.trends.push_back({name, pts.size(), trend(perf), trend(comp)});
  }
  return rep;
}

void write_pareto_csv(const ParetoReport& report, std::ostream& os) {
  os << "variant,n,coverage_target,time_to_target_s,episode_compute_s,step_compute_s,pareto\n";
  for (const auto& p : report.points)
    os << p.variant << ',' << p.n << ',' << fmt(report.target) << ',' << fmt(p.performance) << ',' << fmt(p.episode_compute) << ','
       << fmt(p.step_compute) << ',' << (p.pareto ? 1 : 0) << '\n';
}

void write_trend_csv(const ParetoReport& report, std::ostream& os) {
  os << "variant,points,performance_trend,compute_trend\n";
  for (const auto& t : report.trends)
    os << t.variant << ',' << t.points << ',' << t.performance_trend << ',' << t.compute_trend << '\n';
}

}  // namespace nbvlearn
