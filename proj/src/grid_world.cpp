#include "nbvlearn/grid_world.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include "binary_io.hpp"
#include "nbvlearn/errors.hpp"

namespace nbvlearn {

OccupancyGrid::OccupancyGrid(int width, int height, double resolution, Vec2 origin, VoxelState fill)
    : width_(width), height_(height), resolution_(resolution), origin_(origin) {
  if (width <= 0 || height <= 0) throw ParameterError("grid dimensions must be positive");
  if (!(resolution > 0.0) || !std::isfinite(resolution)) throw ParameterError("grid resolution must be > 0");
  cells_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

void OccupancyGrid::fill(VoxelState s) { std::fill(cells_.begin(), cells_.end(), s); }

CellIndex OccupancyGrid::cell_of(Vec2 world) const {
  const Vec2 g = to_grid(world);
  return {static_cast<int>(std::floor(g.x)), static_cast<int>(std::floor(g.y))};
}

std::size_t OccupancyGrid::count(VoxelState s) const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), s));
}

namespace {

int cells_for(double length_m, double resolution, const char* what) {
  const double n = length_m / resolution;
  const double r = std::round(n);
  if (r < 1.0 || std::abs(n - r) > 1e-6) {
    throw ParameterError(std::string(what) + " (" + std::to_string(length_m) +
                         " m) is not a positive integer multiple of the resolution");
  }
  return static_cast<int>(r);
}

void fill_rect(OccupancyGrid& g, int x0, int y0, int x1, int y1, VoxelState s) {
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) g.set(x, y, s);
}

void close_boundary(OccupancyGrid& g) {
  for (int x = 0; x < g.width(); ++x) {
    g.set(x, 0, VoxelState::occupied);
    g.set(x, g.height() - 1, VoxelState::occupied);
  }
  for (int y = 0; y < g.height(); ++y) {
    g.set(0, y, VoxelState::occupied);
    g.set(g.width() - 1, y, VoxelState::occupied);
  }
}

/// Size of the 4-connected component of free cells containing `seed`, plus
/// the total number of free cells.
std::pair<std::size_t, std::size_t> free_component_size(const OccupancyGrid& g, CellIndex seed) {
  std::vector<std::uint8_t> seen(g.size(), 0);
  std::vector<CellIndex> stack{seed};
  seen[g.index(seed.x, seed.y)] = 1;
  std::size_t reached = 0;
  while (!stack.empty()) {
    const CellIndex c = stack.back();
    stack.pop_back();
    ++reached;
    constexpr std::array<std::array<int, 2>, 4> nbrs{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
    for (auto [dx, dy] : nbrs) {
      const int nx = c.x + dx, ny = c.y + dy;
      if (!g.contains(nx, ny) || g.at(nx, ny) != VoxelState::free) continue;
      auto& s = seen[g.index(nx, ny)];
      if (s) continue;
      s = 1;
      stack.push_back({nx, ny});
    }
  }
  return {reached, g.count(VoxelState::free)};
}

bool free_space_connected(const OccupancyGrid& g) {
  const auto cells = g.cells();
  const auto it = std::find(cells.begin(), cells.end(), VoxelState::free);
  if (it == cells.end()) return true;
  const auto [reached, total] =
      free_component_size(g, g.cell_at_index(static_cast<std::size_t>(it - cells.begin())));
  return reached == total;
}

void validate_start(const OccupancyGrid& g, const WorldGenParams& params) {
  if (!params.start_pose) return;
  const CellIndex c = g.cell_of(params.start_pose->position());
  if (!g.contains(c) || g.at(c) != VoxelState::free)
    throw ParameterError("start pose does not lie in free space of the generated world");
}

}  // namespace

OccupancyGrid generate_maze(const WorldGenParams& params) {
  if (params.kind != WorldKind::maze) throw ParameterError("generate_maze requires world_kind = maze");
  const int n = cells_for(params.side_length_m, params.resolution, "side_length_m");
  const int corridor = cells_for(params.corridor_width_m, params.resolution, "corridor_width_m");
  const int wall = cells_for(params.wall_thickness_m, params.resolution, "wall_thickness_m");
  const int pitch = corridor + wall;
  const int lattice = (n - wall) / pitch;
  if (lattice < 1) throw ParameterError("world too small for the requested corridor width");

  OccupancyGrid g(n, n, params.resolution, {0.0, 0.0}, VoxelState::occupied);
  Rng rng(params.seed);

  auto carve_room = [&](int i, int j) {
    const int x0 = wall + i * pitch, y0 = wall + j * pitch;
    fill_rect(g, x0, y0, x0 + corridor, y0 + corridor, VoxelState::free);
  };
  // Opens the wall between lattice cells (i, j) and (i + dx, j + dy), dx, dy in {0, 1}.
  auto carve_link = [&](int i, int j, int dx, int dy) {
    const int x0 = wall + i * pitch, y0 = wall + j * pitch;
    if (dx == 1) fill_rect(g, x0 + corridor, y0, x0 + pitch, y0 + corridor, VoxelState::free);
    else fill_rect(g, x0, y0 + corridor, x0 + corridor, y0 + pitch, VoxelState::free);
  };

  for (int j = 0; j < lattice; ++j)
    for (int i = 0; i < lattice; ++i) carve_room(i, j);

  // Iterative recursive backtracker; the visited set spans a tree over the lattice.
  const auto lattice_sz = static_cast<std::size_t>(lattice);
  std::vector<std::uint8_t> visited(lattice_sz * lattice_sz, 0);
  // Links as booleans: right[j*lattice+i] joins (i,j)-(i+1,j), up joins (i,j)-(i,j+1).
  std::vector<std::uint8_t> right(visited.size(), 0), up(visited.size(), 0);
  auto id = [&](int i, int j) { return static_cast<std::size_t>(j) * lattice_sz + static_cast<std::size_t>(i); };
  const int si = static_cast<int>(rng.uniform_index(lattice_sz));
  const int sj = static_cast<int>(rng.uniform_index(lattice_sz));
  std::vector<std::pair<int, int>> stack{{si, sj}};
  visited[id(si, sj)] = 1;
  while (!stack.empty()) {
    auto [i, j] = stack.back();
    std::array<std::pair<int, int>, 4> options{};
    int n_opts = 0;
    constexpr std::array<std::array<int, 2>, 4> dirs{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
    for (auto [dx, dy] : dirs) {
      const int ni = i + dx, nj = j + dy;
      if (ni < 0 || nj < 0 || ni >= lattice || nj >= lattice || visited[id(ni, nj)]) continue;
      options[static_cast<std::size_t>(n_opts++)] = {ni, nj};
    }
    if (n_opts == 0) {
      stack.pop_back();
      continue;
    }
    auto [ni, nj] = options[rng.uniform_index(static_cast<std::uint64_t>(n_opts))];
    if (ni != i) (ni > i ? right[id(i, j)] : right[id(ni, nj)]) = 1;
    else (nj > j ? up[id(i, j)] : up[id(ni, nj)]) = 1;
    visited[id(ni, nj)] = 1;
    stack.push_back({ni, nj});
  }
  for (int j = 0; j < lattice; ++j) {
    for (int i = 0; i < lattice; ++i) {
      if (i + 1 < lattice && !right[id(i, j)] && rng.bernoulli(params.loop_fraction)) right[id(i, j)] = 1;
      if (j + 1 < lattice && !up[id(i, j)] && rng.bernoulli(params.loop_fraction)) up[id(i, j)] = 1;
      if (right[id(i, j)]) carve_link(i, j, 1, 0);
      if (up[id(i, j)]) carve_link(i, j, 0, 1);
    }
  }
  validate_start(g, params);
  return g;
}

namespace {

struct Blob {
  Vec2 center;
  double half_a = 0.0;
  double half_b = 0.0;
  double angle = 0.0;
  bool ellipse = false;

  bool contains(Vec2 p) const {
    const Vec2 d = p - center;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * d.x + s * d.y) / half_a;
    const double v = (-s * d.x + c * d.y) / half_b;
    return ellipse ? (u * u + v * v <= 1.0) : (std::abs(u) <= 1.0 && std::abs(v) <= 1.0);
  }
};

}  // namespace

OccupancyGrid generate_cluttered(const WorldGenParams& params) {
  if (params.kind != WorldKind::cluttered)
    throw ParameterError("generate_cluttered requires world_kind = cluttered");
  if (!(params.obstacle_size_min_m > 0.0) || params.obstacle_size_max_m < params.obstacle_size_min_m)
    throw ParameterError("invalid obstacle size range");
  const int n = cells_for(params.side_length_m, params.resolution, "side_length_m");
  const int wall = cells_for(params.wall_thickness_m, params.resolution, "wall_thickness_m");
  OccupancyGrid g(n, n, params.resolution, {0.0, 0.0}, VoxelState::free);
  fill_rect(g, 0, 0, n, wall, VoxelState::occupied);
  fill_rect(g, 0, n - wall, n, n, VoxelState::occupied);
  fill_rect(g, 0, 0, wall, n, VoxelState::occupied);
  fill_rect(g, n - wall, 0, n, n, VoxelState::occupied);
  close_boundary(g);

  Rng rng(params.seed);
  const int count = params.obstacle_count ? *params.obstacle_count
                                          : 5 + static_cast<int>(rng.uniform_index(11));
  if (count < 0) throw ParameterError("obstacle_count must be non-negative");

  constexpr int kMaxAttempts = 200;
  constexpr double kStartClearance = 0.6;
  const double side = params.side_length_m;
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      Blob b;
      b.center = {rng.uniform(0.0, side), rng.uniform(0.0, side)};
      b.half_a = 0.5 * rng.uniform(params.obstacle_size_min_m, params.obstacle_size_max_m);
      b.half_b = 0.5 * rng.uniform(params.obstacle_size_min_m, params.obstacle_size_max_m);
      b.angle = rng.uniform(0.0, std::numbers::pi);
      b.ellipse = rng.bernoulli(0.5);

      std::vector<CellIndex> cells;
      const double reach = std::max(b.half_a, b.half_b) * std::numbers::sqrt2;
      const CellIndex lo = g.cell_of({b.center.x - reach, b.center.y - reach});
      const CellIndex hi = g.cell_of({b.center.x + reach, b.center.y + reach});
      bool hits_start = false;
      for (int y = std::max(lo.y, 0); y <= std::min(hi.y, n - 1); ++y) {
        for (int x = std::max(lo.x, 0); x <= std::min(hi.x, n - 1); ++x) {
          const Vec2 c = g.cell_center({x, y});
          if (!b.contains(c)) continue;
          if (params.start_pose && (c - params.start_pose->position()).norm() <= kStartClearance) hits_start = true;
          if (g.at(x, y) == VoxelState::free) cells.push_back({x, y});
        }
      }
      if (hits_start) continue;
      for (auto c : cells) g.set(c, VoxelState::occupied);
      if (free_space_connected(g)) {
        placed = true;
      } else {
        for (auto c : cells) g.set(c, VoxelState::free);
      }
    }
    if (!placed) {
      throw GenerationError("could not place obstacle " + std::to_string(k) + " without disconnecting free space after " +
                            std::to_string(kMaxAttempts) + " attempts");
    }
  }
  validate_start(g, params);
  return g;
}

OccupancyGrid generate_world(const WorldGenParams& params) {
  return params.kind == WorldKind::maze ? generate_maze(params) : generate_cluttered(params);
}

Pose pick_start_pose(const OccupancyGrid& grid, double clearance_m, Rng& rng) {
  const int r = static_cast<int>(std::ceil(clearance_m / grid.resolution()));
  const double r2 = (clearance_m / grid.resolution()) * (clearance_m / grid.resolution());
  std::vector<CellIndex> options;
  for (int y = 0; y < grid.height(); ++y) {
    for (int x = 0; x < grid.width(); ++x) {
      bool ok = grid.at(x, y) == VoxelState::free;
      for (int dy = -r; ok && dy <= r; ++dy)
        for (int dx = -r; ok && dx <= r; ++dx)
          if (dx * dx + dy * dy <= r2 + 1e-9 && grid.at_or(x + dx, y + dy, VoxelState::occupied) != VoxelState::free)
            ok = false;
      if (ok) options.push_back({x, y});
    }
  }
  if (options.empty()) throw GenerationError("no free cell with the requested clearance");
  const CellIndex c = options[rng.uniform_index(options.size())];
  const Vec2 p = grid.cell_center(c);
  return Pose(p.x, p.y, rng.uniform(-std::numbers::pi, std::numbers::pi));
}

int count_components(const OccupancyGrid& grid, VoxelState s) {
  std::vector<std::uint8_t> seen(grid.size(), 0);
  int components = 0;
  std::vector<CellIndex> stack;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (seen[i] || grid.cells()[i] != s) continue;
    ++components;
    seen[i] = 1;
    stack.push_back(grid.cell_at_index(i));
    while (!stack.empty()) {
      const CellIndex c = stack.back();
      stack.pop_back();
      constexpr std::array<std::array<int, 2>, 4> nbrs{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
      for (auto [dx, dy] : nbrs) {
        const int nx = c.x + dx, ny = c.y + dy;
        if (!grid.contains(nx, ny) || grid.at(nx, ny) != s) continue;
        auto& m = seen[grid.index(nx, ny)];
        if (m) continue;
        m = 1;
        stack.push_back({nx, ny});
      }
    }
  }
  return components;
}

namespace {
constexpr std::array<std::uint8_t, 4> kWorldMagic{'N', 'B', 'V', 'W'};
constexpr std::size_t kWorldHeaderSize = 4 + 1 + 4 + 4 + 8 + 8 + 8;
}  // namespace

void save_world(const OccupancyGrid& grid, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.bytes(kWorldMagic);
  w.u8(kWorldFileVersion);
  w.u32(static_cast<std::uint32_t>(grid.width()));
  w.u32(static_cast<std::uint32_t>(grid.height()));
  w.f64(grid.resolution());
  w.f64(grid.origin().x);
  w.f64(grid.origin().y);
  for (auto s : grid.cells()) w.u8(static_cast<std::uint8_t>(s));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open world file for writing: " + path.string());
  io::write_all(os, w.data());
  if (!os) throw Error("failed writing world file: " + path.string());
}

OccupancyGrid load_world(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open world file: " + path.string());
  const std::string ctx = "world file " + path.string();
  const auto header = io::read_exact(is, kWorldHeaderSize, ctx);
  io::ByteReader r(header, ctx);
  const auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kWorldMagic.begin())) throw FormatError(ctx + ": bad magic");
  const auto version = r.u8();
  if (version != kWorldFileVersion) throw VersionError(ctx, kWorldFileVersion, version);
  const auto w = r.u32();
  const auto h = r.u32();
  const double res = r.f64();
  const double ox = r.f64();
  const double oy = r.f64();
  if (w == 0 || h == 0 || w > 1u << 15 || h > 1u << 15 || !(res > 0.0))
    throw FormatError(ctx + ": corrupt header");
  const auto body = io::read_exact(is, static_cast<std::size_t>(w) * h, ctx);
  OccupancyGrid g(static_cast<int>(w), static_cast<int>(h), res, {ox, oy}, VoxelState::unknown);
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] > 2) throw FormatError(ctx + ": invalid cell state at index " + std::to_string(i));
    g.cells()[i] = static_cast<VoxelState>(body[i]);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError(ctx + ": trailing data");
  return g;
}

}  // namespace nbvlearn
