#include "nbvlearn/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json_config.hpp"
#include "nbvlearn/dataset.hpp"
#include "nbvlearn/errors.hpp"
#include "nbvlearn/eval.hpp"
#include "nbvlearn/models.hpp"
#include "nbvlearn/nn.hpp"

namespace nbvlearn {

namespace {

// Options given on the command line win over values from --config.
void apply_config(CLI::App* sub, const std::string& path) {
  if (path.empty()) return;
  std::ifstream is(path);
  if (!is) throw Error("cannot read config file " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ParameterError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ParameterError("config file " + path + " must hold a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    CLI::Option* opt = sub->get_option_no_throw("--" + it.key());
    if (!opt || it.key() == "config") throw ParameterError("config file " + path + ": unknown key '" + it.key() + "'");
    if (opt->count() > 0) continue;
    auto add = [&](const json& v) {
      if (v.is_string()) opt->add_result(v.get<std::string>());
      else if (v.is_boolean()) opt->add_result(v.get<bool>() ? "true" : "false");
      else opt->add_result(v.dump());
    };
    if (it->is_array())
      for (const auto& v : *it) add(v);
    else
      add(*it);
    opt->run_callback();
  }
}

struct Output {
  std::ofstream file;
  std::ostream* os;
  Output(const std::string& path, std::ostream& fallback) : os(&fallback) {
    if (!path.empty() && path != "-") {
      file.open(path, std::ios::binary);
      if (!file) throw Error("cannot write " + path);
      os = &file;
    }
  }
  std::ostream& operator*() { return *os; }
};

struct Ctx {
  std::ostream& out;
  std::ostream& err;
};

// --- worlds -----------------------------------------------------------------

void add_worlds(CLI::App& app, Ctx& ctx) {
  auto* worlds = app.add_subcommand("worlds", "World generation")->require_subcommand(1);
  auto* gen = worlds->add_subcommand("generate", "Generate maze or cluttered worlds");
  struct Opts {
    std::string config, kind = "maze", out, out_dir;
    std::uint64_t seed = 0;
    double side = 20.0, resolution = 0.2, corridor = 2.0, wall = 0.4, loops = 0.1;
    int obstacles = -1, count = 1;
  };
  auto o = std::make_shared<Opts>();
  gen->add_option("--config", o->config, "JSON file with option values");
  gen->add_option("--kind", o->kind, "maze or cluttered")->check(CLI::IsMember({"maze", "cluttered"}));
  gen->add_option("--seed", o->seed, "World seed");
  gen->add_option("--side", o->side, "Side length, m");
  gen->add_option("--resolution", o->resolution, "Cell size, m");
  gen->add_option("--corridor", o->corridor, "Maze corridor width, m");
  gen->add_option("--wall", o->wall, "Maze wall thickness, m");
  gen->add_option("--loops", o->loops, "Fraction of maze walls removed after carving");
  gen->add_option("--obstacles", o->obstacles, "Cluttered obstacle count (default: random 5-15)");
  gen->add_option("--count", o->count, "Number of worlds; world i uses seed derive(seed, i) when > 1");
  gen->add_option("--out", o->out, "Output file (single world)");
  gen->add_option("--out-dir", o->out_dir, "Output directory (several worlds)");
  gen->callback([gen, o, &ctx] {
    apply_config(gen, o->config);
    if (o->count < 1) throw ParameterError("--count must be >= 1");
    if (o->count == 1 && o->out.empty()) throw CLI::RequiredError("--out");
    if (o->count > 1 && o->out_dir.empty()) throw CLI::RequiredError("--out-dir");
    WorldGenParams p;
    p.kind = parse_world_kind(o->kind);
    p.side_length_m = o->side;
    p.resolution = o->resolution;
    p.corridor_width_m = o->corridor;
    p.wall_thickness_m = o->wall;
    p.loop_fraction = o->loops;
    if (o->obstacles >= 0) p.obstacle_count = o->obstacles;
    if (o->count == 1) {
      p.seed = o->seed;
      save_world(generate_world(p), o->out);
      return;
    }
    std::filesystem::create_directories(o->out_dir);
    for (int i = 0; i < o->count; ++i) {
      p.seed = derive_seed(o->seed, static_cast<std::uint64_t>(i));
      char name[32];
      std::snprintf(name, sizeof name, "world_%04d.bin", i);
      save_world(generate_world(p), std::filesystem::path(o->out_dir) / name);
    }
    ctx.err << "wrote " << o->count << " worlds to " << o->out_dir << '\n';
  });
}

// --- dataset ----------------------------------------------------------------

void add_dataset(CLI::App& app, Ctx& ctx) {
  auto* ds = app.add_subcommand("dataset", "Teacher data")->require_subcommand(1);

  {
    auto* collect = ds->add_subcommand("collect", "Run teacher episodes on maze worlds");
    struct Opts {
      std::string config, out;
      int worlds = 10, threads = 0;
      std::uint64_t seed = 0;
      TeacherConfig teacher;
      double side = 20.0, negatives = 0.0;
      bool quiet = false;
    };
    auto o = std::make_shared<Opts>();
    collect->add_option("--config", o->config, "JSON file with option values");
    collect->add_option("--worlds", o->worlds, "Number of maze worlds");
    collect->add_option("--seed", o->seed, "Generator seed");
    collect->add_option("--out", o->out, "Dataset file")->required();
    collect->add_option("--threads", o->threads, "Worker threads (0: all cores)");
    collect->add_option("--side", o->side, "World side length, m");
    collect->add_option("--candidates", o->teacher.n_candidates, "Uniform candidates per selection");
    collect->add_option("--repetitions", o->teacher.repetitions, "Selections stored per record");
    collect->add_option("--stride", o->teacher.record_stride, "Record every k-th local step");
    collect->add_option("--max-records", o->teacher.max_records, "Records kept per world");
    collect->add_option("--budget", o->teacher.step_budget, "Planning steps per teacher episode");
    collect->add_option("--negatives", o->negatives, "Negatives per positive target (0: none)");
    collect->add_flag("--quiet", o->quiet, "No progress output");
    collect->callback([collect, o, &ctx] {
      apply_config(collect, o->config);
      CollectOptions co;
      co.worlds = o->worlds;
      co.seed = o->seed;
      co.threads = o->threads;
      co.world.side_length_m = o->side;
      co.teacher = o->teacher;
      if (!o->quiet)
        co.progress = [&ctx](int done, int total) {
          if (done == total || done % 10 == 0) ctx.err << "collected " << done << "/" << total << " worlds\n";
        };
      if (o->negatives < 0.0) throw ParameterError("--negatives must be >= 0");
      if (o->negatives == 0.0) {
        collect_dataset(co, o->out);
      } else {
        const auto tmp = std::filesystem::path(o->out + ".positives");
        collect_dataset(co, tmp);
        auto meta = read_dataset_meta(tmp);
        meta.negatives_ratio = o->negatives;
        Rng rng(derive_seed(o->seed, 0x4E67));
        std::size_t skipped = 0;
        {
          DatasetWriter w(o->out, meta);
          for_each_record(tmp, [&](DatasetRecord&& r) {
            std::size_t s = 0;
            std::vector<DatasetRecord> one{std::move(r)};
            one = add_negatives(std::move(one), o->negatives, rng, &s, co.teacher.robot, co.teacher.sensor);
            skipped += s;
            w.append(one.front());
          });
          w.close();
        }
        std::filesystem::remove(tmp);
        if (skipped) ctx.err << "warning: " << skipped << " record(s) got no negatives\n";
      }
      ctx.err << "wrote " << read_dataset_meta(o->out).record_count << " records to " << o->out << '\n';
    });
  }

  {
    auto* split = ds->add_subcommand("split", "World-level train/validation split");
    struct Opts {
      std::string config, in, train_out, val_out;
      double fraction = 0.8;
      std::uint64_t seed = 0;
    };
    auto o = std::make_shared<Opts>();
    split->add_option("--config", o->config, "JSON file with option values");
    split->add_option("--in", o->in, "Dataset file")->required();
    split->add_option("--train-out", o->train_out, "Training split file")->required();
    split->add_option("--val-out", o->val_out, "Validation split file")->required();
    split->add_option("--fraction", o->fraction, "Training fraction of worlds");
    split->add_option("--seed", o->seed, "Split seed");
    split->callback([split, o, &ctx] {
      apply_config(split, o->config);
      const auto [train, val] = split_dataset(load_dataset(o->in), o->fraction, o->seed);
      save_dataset(train, o->train_out);
      save_dataset(val, o->val_out);
      ctx.err << "train: " << train.meta.world_count << " worlds, " << train.records.size() << " records; val: "
              << val.meta.world_count << " worlds, " << val.records.size() << " records\n";
    });
  }

  {
    auto* stats = ds->add_subcommand("stats", "Dataset summary as JSON");
    auto in = std::make_shared<std::string>();
    stats->add_option("--in", *in, "Dataset file")->required();
    stats->callback([in, &ctx] {
      const auto meta = read_dataset_meta(*in);
      const auto s = dataset_stats(*in, meta.teacher.robot);
      ctx.out << json{{"records", s.records},
                      {"worlds", s.worlds},
                      {"positive_targets", s.positive_targets},
                      {"negative_targets", s.negative_targets},
                      {"mean_positive_gain", s.mean_positive_gain},
                      {"mean_negative_gain", s.mean_negative_gain},
                      {"mean_positive_utility", s.mean_positive_utility},
                      {"mean_unknown_fraction", s.mean_unknown_fraction},
                      {"split", meta.split}}
                     .dump()
              << '\n';
    });
  }
}

// --- train ------------------------------------------------------------------

struct TrainOpts {
  std::string config, train, val, out, log;
  int epochs = 10, batch = 128, hidden = 512, layers = 4;
  float lr = 1e-3f, dropout = 0.2f;
  std::uint64_t seed = 0;
  std::size_t max_pairs = 0, max_val_pairs = 0;
  bool verbose = false;
};

void common_train_options(CLI::App* sub, TrainOpts& o) {
  sub->add_option("--config", o.config, "JSON file with option values");
  sub->add_option("--train", o.train, "Training dataset")->required();
  sub->add_option("--val", o.val, "Validation dataset")->required();
  sub->add_option("--out", o.out, "Model file")->required();
  sub->add_option("--log", o.log, "Per-epoch CSV log");
  sub->add_option("--epochs", o.epochs, "Epochs");
  sub->add_option("--batch", o.batch, "Batch size");
  sub->add_option("--lr", o.lr, "Adam learning rate");
  sub->add_option("--hidden", o.hidden, "Hidden width");
  sub->add_option("--layers", o.layers, "Hidden layers");
  sub->add_option("--dropout", o.dropout, "Dropout rate");
  sub->add_option("--seed", o.seed, "Training seed");
  sub->add_option("--max-pairs", o.max_pairs, "Training pairs drawn per epoch (0: all)");
  sub->add_option("--max-val-pairs", o.max_val_pairs, "Validation pairs (0: all)");
  sub->add_flag("--verbose", o.verbose, "Per-epoch progress on stderr");
}

TrainConfig train_config(const TrainOpts& o) {
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.adam.learning_rate = o.lr;
  tc.seed = o.seed;
  tc.max_pairs_per_epoch = o.max_pairs;
  tc.max_val_pairs = o.max_val_pairs;
  if (!o.log.empty()) tc.log_path = o.log;
  tc.verbose = o.verbose;
  return tc;
}

template <class M>
void report(const TrainResult<M>& r, const std::string& out, std::ostream& err) {
  err << "best epoch " << r.best_epoch << " val loss " << r.best_val_loss << ", saved " << out << '\n';
}

void add_train(CLI::App& app, Ctx& ctx) {
  auto* train = app.add_subcommand("train", "Model training")->require_subcommand(1);

  {
    auto* cvae = train->add_subcommand("cvae", "Train the pose CVAE on positive targets");
    auto o = std::make_shared<TrainOpts>();
    auto latent = std::make_shared<int>(3);
    auto kl = std::make_shared<double>(1.0);
    auto joint = std::make_shared<bool>(false);
    auto dec_dropout = std::make_shared<float>(0.0f);
    common_train_options(cvae, *o);
    cvae->add_option("--latent", *latent, "Latent dimension");
    cvae->add_option("--kl-weight", *kl, "KL weight");
    cvae->add_option("--decoder-dropout", *dec_dropout, "Decoder dropout rate");
    cvae->add_flag("--joint", *joint, "Also decode the gain");
    cvae->callback([cvae, o, latent, kl, joint, dec_dropout, &ctx] {
      apply_config(cvae, o->config);
      const auto tr = load_dataset(o->train);
      const auto va = load_dataset(o->val);
      CvaeConfig mc;
      mc.hidden = o->hidden;
      mc.layers = o->layers;
      mc.latent = *latent;
      mc.dropout = o->dropout;
      mc.decoder_dropout = *dec_dropout;
      mc.joint_gain = *joint;
      mc.kl_weight = *kl;
      mc.extent = kLocalMapSize * tr.meta.resolution;
      mc.gain_scale = max_visible_cells(tr.meta.teacher.sensor, tr.meta.resolution);
      const auto r = train_cvae(tr.records, va.records, mc, train_config(*o));
      save_model(r.model, o->out);
      report(r, o->out, ctx.err);
    });
  }

  {
    auto* gain = train->add_subcommand("gain", "Train a gain regressor on labeled targets");
    auto o = std::make_shared<TrainOpts>();
    auto encoder = std::make_shared<std::string>("pooling");
    auto features = std::make_shared<int>(128);
    common_train_options(gain, *o);
    gain->add_option("--encoder", *encoder, "pooling or cnn")->check(CLI::IsMember({"pooling", "cnn"}));
    gain->add_option("--features", *features, "CNN feature width");
    gain->callback([gain, o, encoder, features, &ctx] {
      apply_config(gain, o->config);
      const auto tr = load_dataset(o->train);
      const auto va = load_dataset(o->val);
      GainConfig mc;
      mc.encoder = *encoder == "cnn" ? GainEncoder::cnn : GainEncoder::pooling;
      mc.hidden = o->hidden;
      mc.layers = o->layers;
      mc.dropout = o->dropout;
      mc.cnn_features = *features;
      mc.extent = kLocalMapSize * tr.meta.resolution;
      mc.gain_scale = max_visible_cells(tr.meta.teacher.sensor, tr.meta.resolution);
      const auto r = train_gain(tr.records, va.records, mc, train_config(*o));
      save_model(r.model, o->out);
      report(r, o->out, ctx.err);
      ctx.err << "validation mean absolute gain error " << gain_mean_absolute_error(r.model, va.records) << '\n';
    });
  }

  {
    auto* im = train->add_subcommand("imitation", "Train the single-pose regression baseline");
    auto o = std::make_shared<TrainOpts>();
    common_train_options(im, *o);
    im->callback([im, o, &ctx] {
      apply_config(im, o->config);
      const auto tr = load_dataset(o->train);
      const auto va = load_dataset(o->val);
      ImitationConfig mc;
      mc.hidden = o->hidden;
      mc.layers = o->layers;
      mc.dropout = o->dropout;
      mc.extent = kLocalMapSize * tr.meta.resolution;
      const auto r = train_imitation(tr.records, va.records, mc, train_config(*o));
      save_model(r.model, o->out);
      report(r, o->out, ctx.err);
    });
  }
}

// --- eval -------------------------------------------------------------------

struct PlannerOpts {
  std::string sampler = "uniform", gain_mode = "raycast";
  int n = 10, yaw_bins = 16;
  bool parallel = false;
  std::string cvae, gain_mlp, gain_cnn, imitation;
};

void planner_options(CLI::App* sub, PlannerOpts& o) {
  sub->add_option("--sampler", o.sampler, "uniform, cvae or imitation")
      ->check(CLI::IsMember({"uniform", "cvae", "imitation"}));
  sub->add_option("--gain-mode", o.gain_mode, "raycast, learned_mlp, learned_cnn or joint")
      ->check(CLI::IsMember({"raycast", "learned_mlp", "learned_cnn", "joint"}));
  sub->add_option("--n", o.n, "Candidates per step");
  sub->add_option("--yaw-bins", o.yaw_bins, "Orientation bins");
  sub->add_flag("--parallel-scoring", o.parallel, "Score ray-cast gains on worker threads");
  sub->add_option("--cvae", o.cvae, "CVAE model file");
  sub->add_option("--gain-mlp", o.gain_mlp, "Pooling gain model file");
  sub->add_option("--gain-cnn", o.gain_cnn, "CNN gain model file");
  sub->add_option("--imitation", o.imitation, "Imitation model file");
}

PlannerConfig planner_config(const PlannerOpts& o) {
  PlannerConfig pc;
  pc.sampler = parse_sampler(o.sampler);
  pc.gain_mode = parse_gain_mode(o.gain_mode);
  pc.n_samples = o.n;
  pc.yaw_bins = o.yaw_bins;
  pc.parallel_scoring = o.parallel;
  pc.validate();
  return pc;
}

ModelPaths model_paths(const PlannerOpts& o) {
  ModelPaths m;
  if (!o.cvae.empty()) m.cvae = o.cvae;
  if (!o.gain_mlp.empty()) m.gain_mlp = o.gain_mlp;
  if (!o.gain_cnn.empty()) m.gain_cnn = o.gain_cnn;
  if (!o.imitation.empty()) m.imitation = o.imitation;
  return m;
}

void add_eval(CLI::App& app, Ctx& ctx) {
  auto* ev = app.add_subcommand("eval", "Exploration experiments")->require_subcommand(1);

  {
    auto* ep = ev->add_subcommand("episode", "Run one exploration episode, JSON-lines log");
    struct Opts {
      std::string config, world, kind = "maze", out, start;
      std::uint64_t world_seed = 0, seed = 0;
      double side = 20.0;
      int budget = 500;
      double completion = 0.99, stop = 1.0;
      bool no_timing = false;
      PlannerOpts planner;
    };
    auto o = std::make_shared<Opts>();
    ep->add_option("--config", o->config, "JSON file with option values");
    ep->add_option("--world", o->world, "World file (otherwise generated)");
    ep->add_option("--kind", o->kind, "Generated world kind")->check(CLI::IsMember({"maze", "cluttered"}));
    ep->add_option("--world-seed", o->world_seed, "Generated world seed");
    ep->add_option("--side", o->side, "Generated world side, m");
    ep->add_option("--start", o->start, "Start pose x,y,yaw (otherwise drawn from --seed)");
    ep->add_option("--seed", o->seed, "Episode seed");
    ep->add_option("--budget", o->budget, "Planning step budget");
    ep->add_option("--completion", o->completion, "Coverage counted as complete");
    ep->add_option("--stop", o->stop, "Coverage at which the episode stops");
    ep->add_option("--out", o->out, "JSON-lines log (default stdout)");
    ep->add_flag("--no-timing", o->no_timing, "Omit wall-clock fields");
    planner_options(ep, o->planner);
    ep->callback([ep, o, &ctx] {
      apply_config(ep, o->config);
      OccupancyGrid world;
      if (!o->world.empty()) {
        world = load_world(o->world);
      } else {
        WorldGenParams p;
        p.kind = parse_world_kind(o->kind);
        p.seed = o->world_seed;
        p.side_length_m = o->side;
        world = generate_world(p);
      }
      EpisodeConfig ec;
      ec.planner = planner_config(o->planner);
      ec.step_budget = o->budget;
      ec.completion_coverage = o->completion;
      ec.stop_coverage = o->stop;
      const std::vector<PlannerConfig> needed{ec.planner};
      const auto models = load_models(model_paths(o->planner), needed);
      Pose start;
      if (!o->start.empty()) {
        double v[3] = {0, 0, 0};
        char c1 = 0, c2 = 0;
        std::istringstream ss(o->start);
        if (!(ss >> v[0] >> c1 >> v[1] >> c2 >> v[2]) || c1 != ',' || c2 != ',')
          throw ParameterError("--start expects x,y,yaw");
        start = Pose(v[0], v[1], v[2]);
      } else {
        Rng rng(derive_seed(o->seed, 0x57A7));
        start = pick_start_pose(world, ec.planner.robot.footprint_radius, rng);
      }
      const auto log = run_episode(world, start, ec, models.view(), o->seed);
      Output out(o->out, ctx.out);
      log.write_jsonl(*out, !o->no_timing);
      ctx.err << to_string(log.status) << " after " << log.steps.size() << " steps, coverage " << log.final_coverage()
              << '\n';
    });
  }

  {
    auto* bench = ev->add_subcommand("benchmark", "Run a benchmark configuration, CSV table");
    struct Opts {
      std::string config, out;
      int threads = -1;
      bool no_timing = false;
    };
    auto o = std::make_shared<Opts>();
    bench->add_option("--config", o->config, "Benchmark JSON configuration")->required();
    bench->add_option("--out", o->out, "CSV output (default stdout)");
    bench->add_option("--threads", o->threads, "Override the configured worker count");
    bench->add_flag("--no-timing", o->no_timing, "Leave wall-clock columns empty");
    bench->callback([o, &ctx] {
      if (!std::filesystem::exists(o->config)) throw Error("benchmark config not found: " + o->config);
      auto cfg = load_benchmark_config(o->config);
      if (o->threads >= 0) cfg.threads = o->threads;
      const auto res = run_benchmark(cfg);
      Output out(o->out, ctx.out);
      write_benchmark_csv(res, *out, !o->no_timing);
    });
  }

  {
    auto* pareto = ev->add_subcommand("pareto", "Performance vs compute report from a benchmark CSV");
    struct Opts {
      std::string in, out, trends;
      double target = 0.90;
    };
    auto o = std::make_shared<Opts>();
    pareto->add_option("--in", o->in, "Benchmark CSV")->required();
    pareto->add_option("--out", o->out, "Points CSV (default stdout)");
    pareto->add_option("--trends", o->trends, "Per-variant trend CSV");
    pareto->add_option("--target", o->target, "Coverage target used as performance");
    pareto->callback([o, &ctx] {
      std::ifstream is(o->in);
      if (!is) throw Error("cannot read " + o->in);
      const auto rep = pareto_report(read_benchmark_csv(is), o->target);
      for (const auto& e : rep.excluded) ctx.err << "warning: " << e << " never reached the target, excluded\n";
      Output out(o->out, ctx.out);
      write_pareto_csv(rep, *out);
      if (!o->trends.empty()) {
        Output t(o->trends, ctx.out);
        write_trend_csv(rep, *t);
      }
    });
  }

  {
    auto* util = ev->add_subcommand("utility", "Oracle utility of chosen actions on stored local maps");
    struct Opts {
      std::string config, dataset;
      std::uint64_t seed = 0;
      std::size_t limit = 0;
      PlannerOpts planner;
    };
    auto o = std::make_shared<Opts>();
    util->add_option("--config", o->config, "JSON file with option values");
    util->add_option("--dataset", o->dataset, "Dataset file")->required();
    util->add_option("--seed", o->seed, "Sampling seed");
    util->add_option("--limit", o->limit, "Use the first K records (0: all)");
    planner_options(util, o->planner);
    util->callback([util, o, &ctx] {
      apply_config(util, o->config);
      auto d = load_dataset(o->dataset);
      if (o->limit > 0 && d.records.size() > o->limit) d.records.resize(o->limit);
      PlannerConfig pc = planner_config(o->planner);
      pc.robot = d.meta.teacher.robot;
      pc.sensor = d.meta.teacher.sensor;
      const std::vector<PlannerConfig> needed{pc};
      const auto models = load_models(model_paths(o->planner), needed);
      const auto s = utility_on_records(d.records, pc, models.view(), o->seed);
      ctx.out << json{{"sampler", o->planner.sampler},
                      {"gain_mode", o->planner.gain_mode},
                      {"n", o->planner.n},
                      {"maps", s.maps},
                      {"mean_true_utility", s.mean_true_utility},
                      {"mean_true_gain", s.mean_true_gain},
                      {"infeasible_draws", s.infeasible_draws},
                      {"backfilled", s.backfilled}}
                     .dump()
              << '\n';
    });
  }
}

// --- inspect ----------------------------------------------------------------

void add_inspect(CLI::App& app, Ctx& ctx) {
  auto* ins = app.add_subcommand("inspect", "Print artifact metadata as JSON")->require_subcommand(1);
  auto model_path = std::make_shared<std::string>();
  auto* model = ins->add_subcommand("model", "Model file summary");
  model->add_option("path", *model_path, "Model file")->required();
  model->callback([model_path, &ctx] {
    const auto f = nn::load_weights(*model_path);
    json nets = json::object();
    for (const auto& [name, net] : f.networks)
      nets[name] = {{"layers", net.specs().size()}, {"parameters", net.parameter_count()}};
    json meta = json::object();
    try {
      meta = json::parse(f.metadata);
    } catch (const json::exception&) {
      meta = f.metadata;
    }
    ctx.out << json{{"kind", f.model_kind}, {"networks", nets}, {"metadata", meta}}.dump() << '\n';
  });

  auto ds_path = std::make_shared<std::string>();
  auto* ds = ins->add_subcommand("dataset", "Dataset meta block");
  ds->add_option("path", *ds_path, "Dataset file")->required();
  ds->callback([ds_path, &ctx] { ctx.out << read_dataset_meta(*ds_path).to_json() << '\n'; });
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learned sampling for next-best-view exploration", "nbvlearn"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "nbvlearn 0.1.0");
  Ctx ctx{out, err};
  add_worlds(app, ctx);
  add_dataset(app, ctx);
  add_train(app, ctx);
  add_eval(app, ctx);
  add_inspect(app, ctx);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << '\n' << app.help("", CLI::AppFormatMode::Normal);
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

int cli_main(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace nbvlearn
