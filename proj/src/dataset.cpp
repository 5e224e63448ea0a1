#include "nbvlearn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>

#include "binary_io.hpp"
#include "json_config.hpp"
#include "nbvlearn/errors.hpp"

namespace nbvlearn {

namespace {

constexpr char kMagic[4] = {'N', 'B', 'V', 'D'};
// magic + version + reserved size
constexpr std::size_t kHeaderSize = 12;
constexpr std::uint32_t kMetaReserved = 4096;
// Sanity bound on a single record payload.
constexpr std::uint32_t kMaxRecordBytes = 64u << 20;

Vec2 local_metric_center(const LocalMap& local, CellIndex c) {
  const double r = local.cells.resolution();
  return {(c.x + 0.5) * r, (c.y + 0.5) * r};
}

CellIndex local_metric_cell(const LocalMap& local, Vec2 p) {
  const double r = local.cells.resolution();
  return {static_cast<int>(std::floor(p.x / r)), static_cast<int>(std::floor(p.y / r))};
}

void encode_record(const DatasetRecord& r, io::ByteWriter& w) {
  w.u32(r.world_id);
  w.u32(r.step);
  const auto& g = r.local.cells;
  w.u32(static_cast<std::uint32_t>(g.width()));
  w.u32(static_cast<std::uint32_t>(g.height()));
  w.f64(g.resolution());
  w.f64(g.origin().x);
  w.f64(g.origin().y);
  w.f64(r.local.robot_yaw);
  w.u32(static_cast<std::uint32_t>(r.local.offset.x));
  w.u32(static_cast<std::uint32_t>(r.local.offset.y));
  for (auto s : g.cells()) w.u8(static_cast<std::uint8_t>(s));
  w.u32(static_cast<std::uint32_t>(r.targets.size()));
  for (std::size_t i = 0; i < r.targets.size(); ++i) {
    const auto& t = r.targets[i];
    w.f64(t.x);
    w.f64(t.y);
    w.f64(t.yaw);
    w.u8(t.gain ? 1 : 0);
    w.f64(t.gain.value_or(0.0));
    w.u8(r.negative[i]);
  }
  w.u32(static_cast<std::uint32_t>(r.rng_seeds.size()));
  for (auto s : r.rng_seeds) w.u64(s);
}

DatasetRecord decode_record(io::ByteReader& rd) {
  DatasetRecord r;
  r.world_id = rd.u32();
  r.step = rd.u32();
  const auto w = static_cast<int>(rd.u32());
  const auto h = static_cast<int>(rd.u32());
  if (w <= 0 || h <= 0 || w > 4096 || h > 4096) throw FormatError("bad local map size");
  const double res = rd.f64();
  const double ox = rd.f64();
  const double oy = rd.f64();
  if (!(res > 0.0)) throw FormatError("bad local map resolution");
  r.local.cells = OccupancyGrid(w, h, res, {ox, oy});
  r.local.robot_yaw = rd.f64();
  r.local.offset.x = static_cast<std::int32_t>(rd.u32());
  r.local.offset.y = static_cast<std::int32_t>(rd.u32());
  const auto raw = rd.bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  auto cells = r.local.cells.cells();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] > 2) throw FormatError("bad voxel state " + std::to_string(raw[i]));
    cells[i] = static_cast<VoxelState>(raw[i]);
  }
  const auto n = rd.u32();
  if (n > rd.remaining()) throw FormatError("bad target count");
  r.targets.reserve(n);
  r.negative.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    PoseTarget t;
    t.x = rd.f64();
    t.y = rd.f64();
    t.yaw = rd.f64();
    const bool has_gain = rd.u8() != 0;
    const double g = rd.f64();
    if (has_gain) t.gain = g;
    r.targets.push_back(t);
    r.negative.push_back(rd.u8());
  }
  const auto s = rd.u32();
  if (s > rd.remaining()) throw FormatError("bad seed count");
  r.rng_seeds.resize(s);
  for (auto& v : r.rng_seeds) v = rd.u64();
  if (rd.remaining() != 0) throw FormatError("trailing bytes");
  return r;
}

std::vector<std::uint8_t> meta_block(const DatasetMeta& meta) {
  const std::string text = meta.to_json();
  if (text.size() + 8 > kMetaReserved) throw FormatError("dataset meta block too large");
  io::ByteWriter w;
  w.str(text);
  w.data().resize(kMetaReserved - 4, 0);
  const auto crc = io::crc32(w.data());
  w.u32(crc);
  return std::move(w.data());
}

struct Reader {
  std::ifstream is;
  DatasetMeta meta;

  explicit Reader(const std::filesystem::path& path) : is(path, std::ios::binary) {
    const std::string ctx = path.string();
    if (!is) throw FormatError("cannot open dataset " + ctx);
    const auto head = io::read_exact(is, kHeaderSize, ctx);
    if (!std::equal(head.begin(), head.begin() + 4, kMagic)) throw FormatError(ctx + ": not a dataset file");
    io::ByteReader hr(head, ctx);
    hr.bytes(4);
    const auto version = hr.u32();
    if (version != kDatasetFileVersion) throw VersionError(ctx, kDatasetFileVersion, version);
    const auto reserved = hr.u32();
    if (reserved < 8 || reserved > (1u << 20)) throw FormatError(ctx + ": bad meta block size");
    const auto block = io::read_exact(is, reserved, ctx + ": meta block");
    const std::span<const std::uint8_t> all(block);
    io::ByteReader tail(all.subspan(reserved - 4), ctx);
    if (tail.u32() != io::crc32(all.first(reserved - 4)))
      throw FormatError(ctx + ": meta block checksum mismatch");
    io::ByteReader br(block, ctx + ": meta block");
    meta = DatasetMeta::from_json(br.str());
  }
};

}  // namespace

// --- records ----------------------------------------------------------------

std::size_t DatasetRecord::positive_count() const {
  return static_cast<std::size_t>(std::count(negative.begin(), negative.end(), std::uint8_t{0}));
}

void DatasetRecord::validate() const {
  if (local.cells.width() != kLocalMapSize || local.cells.height() != kLocalMapSize)
    throw DataError("record local map must be 50x50");
  if (targets.size() != negative.size()) throw DataError("record has mismatched target and flag counts");
}

bool operator==(const DatasetRecord& a, const DatasetRecord& b) {
  return a.world_id == b.world_id && a.step == b.step && a.local.cells == b.local.cells &&
         a.local.robot_yaw == b.local.robot_yaw && a.local.offset == b.local.offset && a.targets == b.targets &&
         a.negative == b.negative && a.rng_seeds == b.rng_seeds;
}

void TeacherConfig::validate() const {
  if (n_candidates < 1) throw ParameterError("teacher n_candidates must be >= 1");
  if (repetitions < 1) throw ParameterError("teacher repetitions must be >= 1");
  if (record_stride < 1) throw ParameterError("teacher record_stride must be >= 1");
  if (max_records < 0) throw ParameterError("teacher max_records must be >= 0");
  if (step_budget < 1) throw ParameterError("teacher step_budget must be >= 1");
  if (yaw_bins < 1) throw ParameterError("teacher yaw_bins must be >= 1");
  robot.validate();
  sensor.validate();
}

// --- meta -------------------------------------------------------------------

std::string DatasetMeta::to_json() const {
  json j{{"format_version", format_version},
         {"record_count", record_count},
         {"world_count", world_count},
         {"seed", seed},
         {"train_fraction", train_fraction},
         {"val_fraction", val_fraction},
         {"split", split},
         {"negatives_ratio", negatives_ratio},
         {"resolution", resolution},
         {"teacher", teacher}};
  return j.dump();
}

DatasetMeta DatasetMeta::from_json(const std::string& text) {
  DatasetMeta m;
  try {
    const json j = json::parse(text);
    m.format_version = j.at("format_version").get<std::uint32_t>();
    m.record_count = j.at("record_count").get<std::uint64_t>();
    m.world_count = j.at("world_count").get<std::uint32_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.train_fraction = j.at("train_fraction").get<double>();
    m.val_fraction = j.at("val_fraction").get<double>();
    m.split = j.at("split").get<std::string>();
    m.negatives_ratio = j.at("negatives_ratio").get<double>();
    m.resolution = j.at("resolution").get<double>();
    m.teacher = j.at("teacher").get<TeacherConfig>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad dataset meta: ") + e.what());
  }
  return m;
}

// --- negatives, split -------------------------------------------------------

namespace {

double utility_in(const LocalContext& ctx, const PoseTarget& target, const RobotModel& robot,
                  const SensorModel& sensor) {
  const LocalMap& local = ctx.local;
  const CellIndex c = local_metric_cell(local, {target.x, target.y});
  if (!local.cells.contains(c) || !ctx.field.reachable(c)) return 0.0;
  const int gain = compute_gain(local, target.pose(), sensor);
  const double cost = candidate_cost(ctx.field.distance(c), angle_diff(target.yaw, local.robot_yaw), robot,
                                     local.cells.resolution());
  return gain / cost;
}

}  // namespace

double target_utility(const LocalMap& local, const PoseTarget& target, const RobotModel& robot,
                      const SensorModel& sensor) {
  return utility_in(LocalContext(local, robot), target, robot, sensor);
}

std::vector<DatasetRecord> add_negatives(std::vector<DatasetRecord> records, double ratio, Rng& rng,
                                         std::size_t* skipped, const RobotModel& robot,
                                         const SensorModel& sensor) {
  if (!(ratio > 0.0) || !std::isfinite(ratio)) throw ParameterError("negatives ratio must be > 0");
  std::size_t skip = 0;
  for (auto& r : records) {
    const LocalContext ctx(r.local, robot);
    const auto& cells = ctx.field.reachable_cells();
    if (cells.empty()) {
      ++skip;
      continue;
    }
    const auto n = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(r.positive_count()) - 1e-9));
    for (std::size_t i = 0; i < n; ++i) {
      const CellIndex c = cells[rng.uniform_index(cells.size())];
      const Vec2 p = local_metric_center(r.local, c);
      const double yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
      PoseTarget t{p.x, p.y, Pose(p.x, p.y, yaw).yaw, std::nullopt};
      t.gain = compute_gain(r.local, t.pose(), sensor);
      r.targets.push_back(t);
      r.negative.push_back(1);
    }
  }
  if (skipped) *skipped = skip;
  return records;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& dataset, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ParameterError("train fraction must be in (0, 1)");
  std::set<std::uint32_t> ids;
  for (const auto& r : dataset.records) ids.insert(r.world_id);
  if (ids.size() < 2) throw DataError("split needs at least 2 worlds, dataset has " + std::to_string(ids.size()));
  std::vector<std::uint32_t> worlds(ids.begin(), ids.end());
  Rng rng(seed);
  for (std::size_t i = worlds.size() - 1; i > 0; --i) std::swap(worlds[i], worlds[rng.uniform_index(i + 1)]);
  const auto w = static_cast<double>(worlds.size());
  const auto n_train =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(train_fraction * w)), 1, worlds.size() - 1);
  const std::set<std::uint32_t> train_ids(worlds.begin(), worlds.begin() + static_cast<std::ptrdiff_t>(n_train));

  std::pair<Dataset, Dataset> out;
  for (auto* d : {&out.first, &out.second}) {
    d->meta = dataset.meta;
    d->meta.seed = seed;
    d->meta.train_fraction = train_fraction;
    d->meta.val_fraction = 1.0 - train_fraction;
  }
  out.first.meta.split = "train";
  out.second.meta.split = "val";
  for (const auto& r : dataset.records) (train_ids.count(r.world_id) ? out.first : out.second).records.push_back(r);
  out.first.meta.world_count = static_cast<std::uint32_t>(n_train);
  out.second.meta.world_count = static_cast<std::uint32_t>(worlds.size() - n_train);
  out.first.meta.record_count = out.first.records.size();
  out.second.meta.record_count = out.second.records.size();
  return out;
}

// --- files ------------------------------------------------------------------

DatasetWriter::DatasetWriter(const std::filesystem::path& path, DatasetMeta meta)
    : path_(path), meta_(std::move(meta)) {
  meta_.format_version = kDatasetFileVersion;
  meta_.record_count = 0;
  os_.open(path_, std::ios::binary | std::ios::trunc);
  if (!os_) throw Error("cannot write dataset " + path_.string());
  io::ByteWriter w;
  w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
  w.u32(kDatasetFileVersion);
  w.u32(kMetaReserved);
  io::write_all(os_, w.data());
  io::write_all(os_, meta_block(meta_));
  open_ = true;
}

DatasetWriter::~DatasetWriter() {
  try {
    close();
  } catch (...) {
  }
}

void DatasetWriter::append(const DatasetRecord& record) {
  if (!open_) throw Error("dataset writer is closed");
  record.validate();
  io::ByteWriter w;
  encode_record(record, w);
  if (w.data().size() > kMaxRecordBytes) throw FormatError("record too large");
  io::ByteWriter frame;
  frame.u32(static_cast<std::uint32_t>(w.data().size()));
  io::write_all(os_, frame.data());
  io::write_all(os_, w.data());
  frame.clear();
  frame.u32(io::crc32(w.data()));
  io::write_all(os_, frame.data());
  ++meta_.record_count;
}

void DatasetWriter::write_meta() {
  os_.seekp(static_cast<std::streamoff>(kHeaderSize));
  io::write_all(os_, meta_block(meta_));
  os_.seekp(0, std::ios::end);
}

void DatasetWriter::close() {
  if (!open_) return;
  open_ = false;
  write_meta();
  os_.close();
  if (!os_) throw Error("failed writing dataset " + path_.string());
}

DatasetMeta read_dataset_meta(const std::filesystem::path& path) { return Reader(path).meta; }

void for_each_record(const std::filesystem::path& path, const std::function<void(DatasetRecord&&)>& fn) {
  Reader rd(path);
  for (std::uint64_t i = 0; i < rd.meta.record_count; ++i) {
    const std::string ctx = path.string() + ": record " + std::to_string(i);
    const auto len_bytes = io::read_exact(rd.is, 4, ctx);
    const auto len = io::ByteReader(len_bytes, ctx).u32();
    if (len > kMaxRecordBytes) throw FormatError(ctx + ": bad length");
    const auto payload = io::read_exact(rd.is, len, ctx);
    const auto crc_bytes = io::read_exact(rd.is, 4, ctx);
    if (io::ByteReader(crc_bytes, ctx).u32() != io::crc32(payload)) throw FormatError(ctx + ": checksum mismatch");
    DatasetRecord r;
    try {
      io::ByteReader br(payload, ctx);
      r = decode_record(br);
    } catch (const FormatError& e) {
      throw FormatError(ctx + ": " + e.what());
    }
    fn(std::move(r));
  }
  if (rd.is.peek() != std::char_traits<char>::eof())
    throw FormatError(path.string() + ": trailing data after " + std::to_string(rd.meta.record_count) + " records");
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  DatasetWriter w(path, dataset.meta);
  for (const auto& r : dataset.records) w.append(r);
  w.close();
}

Dataset load_dataset(const std::filesystem::path& path) {
  Dataset d;
  d.meta = read_dataset_meta(path);
  d.records.reserve(d.meta.record_count);
  for_each_record(path, [&](DatasetRecord&& r) { d.records.push_back(std::move(r)); });
  return d;
}

DatasetStats dataset_stats(const std::filesystem::path& path, const RobotModel& robot) {
  DatasetStats s;
  const auto meta = read_dataset_meta(path);
  std::set<std::uint32_t> worlds;
  double pos_gain = 0, neg_gain = 0, pos_util = 0, unknown = 0;
  std::uint64_t pos_labeled = 0, neg_labeled = 0;
  for_each_record(path, [&](DatasetRecord&& r) {
    ++s.records;
    const LocalContext ctx(r.local, robot);
    worlds.insert(r.world_id);
    unknown += static_cast<double>(r.local.cells.count(VoxelState::unknown)) /
               static_cast<double>(r.local.cells.size());
    for (std::size_t i = 0; i < r.targets.size(); ++i) {
      const auto& t = r.targets[i];
      if (r.negative[i]) {
        ++s.negative_targets;
        if (t.gain) neg_gain += *t.gain, ++neg_labeled;
      } else {
        ++s.positive_targets;
        if (t.gain) pos_gain += *t.gain, ++pos_labeled;
        pos_util += utility_in(ctx, t, robot, meta.teacher.sensor);
      }
    }
  });
  s.worlds = static_cast<std::uint32_t>(worlds.size());
  if (pos_labeled) s.mean_positive_gain = pos_gain / static_cast<double>(pos_labeled);
  if (neg_labeled) s.mean_negative_gain = neg_gain / static_cast<double>(neg_labeled);
  if (s.positive_targets) s.mean_positive_utility = pos_util / static_cast<double>(s.positive_targets);
  if (s.records) s.mean_unknown_fraction = unknown / static_cast<double>(s.records);
  return s;
}

}  // namespace nbvlearn
