#include "nbvlearn/paths.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <queue>

namespace nbvlearn {

Traversability inflate_obstacles(const OccupancyGrid& grid, double footprint_radius, bool unknown_blocks,
                                 std::optional<CellIndex> exempt) {
  Traversability t(grid.width(), grid.height());
  const double r = std::max(0.0, footprint_radius / grid.resolution());
  const int ri = static_cast<int>(std::floor(r + 1e-9));
  const double r2 = r * r + 1e-9;
  std::vector<CellIndex> offsets;
  for (int dy = -ri; dy <= ri; ++dy)
    for (int dx = -ri; dx <= ri; ++dx)
      if (dx * dx + dy * dy <= r2) offsets.push_back({dx, dy});

  auto blocking = [&](int x, int y) {
    if (!grid.contains(x, y)) return true;
    const VoxelState s = grid.at(x, y);
    return s == VoxelState::occupied || (unknown_blocks && s == VoxelState::unknown);
  };
  for (int y = 0; y < grid.height(); ++y) {
    for (int x = 0; x < grid.width(); ++x) {
      if (grid.at(x, y) != VoxelState::free) continue;
      bool ok = true;
      for (const auto& o : offsets) {
        if (blocking(x + o.x, y + o.y)) {
          ok = false;
          break;
        }
      }
      t.set({x, y}, ok);
    }
  }
  if (exempt && t.contains(*exempt) && grid.at(*exempt) == VoxelState::free) t.set(*exempt, true);
  return t;
}

namespace {

struct Move {
  int dx, dy;
  double cost;  // in cells
};
constexpr std::array<Move, 8> kMoves{{{1, 0, 1.0},
                                      {-1, 0, 1.0},
                                      {0, 1, 1.0},
                                      {0, -1, 1.0},
                                      {1, 1, std::numbers::sqrt2},
                                      {1, -1, std::numbers::sqrt2},
                                      {-1, 1, std::numbers::sqrt2},
                                      {-1, -1, std::numbers::sqrt2}}};

bool move_allowed(const Traversability& t, CellIndex c, const Move& m) {
  const CellIndex n{c.x + m.dx, c.y + m.dy};
  if (!t.traversable(n)) return false;
  if (m.dx != 0 && m.dy != 0) {
    return t.traversable({c.x + m.dx, c.y}) && t.traversable({c.x, c.y + m.dy});
  }
  return true;
}

using QueueItem = std::pair<double, std::int32_t>;
using MinQueue = std::priority_queue<QueueItem, std::vector<QueueItem>, std::greater<>>;

}  // namespace

DistanceField::DistanceField(const Traversability& trav, CellIndex source, double resolution)
    : width_(trav.width()),
      height_(trav.height()),
      source_(source),
      dist_(static_cast<std::size_t>(trav.width()) * trav.height(), kUnreachable),
      parent_(dist_.size(), -1) {
  if (!trav.traversable(source)) return;
  MinQueue queue;
  const auto src = static_cast<std::int32_t>(trav.index(source));
  dist_[static_cast<std::size_t>(src)] = 0.0;
  queue.push({0.0, src});
  std::vector<std::uint8_t> done(dist_.size(), 0);
  while (!queue.empty()) {
    const auto [d, idx] = queue.top();
    queue.pop();
    const auto u = static_cast<std::size_t>(idx);
    if (done[u]) continue;
    done[u] = 1;
    const CellIndex c{idx % width_, idx / width_};
    order_.push_back(c);
    for (const auto& m : kMoves) {
      // The source may sit in an inflated cell; moves out of it are still checked.
      if (!move_allowed(trav, c, m)) continue;
      const CellIndex n{c.x + m.dx, c.y + m.dy};
      const auto v = trav.index(n);
      const double nd = d + m.cost * resolution;
      if (nd < dist_[v]) {
        dist_[v] = nd;
        parent_[v] = idx;
        queue.push({nd, static_cast<std::int32_t>(v)});
      }
    }
  }
}

bool DistanceField::reachable(CellIndex c) const {
  return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_ &&
         dist_[static_cast<std::size_t>(c.y) * width_ + c.x] != kUnreachable;
}

double DistanceField::distance(CellIndex c) const {
  if (c.x < 0 || c.y < 0 || c.x >= width_ || c.y >= height_) return kUnreachable;
  return dist_[static_cast<std::size_t>(c.y) * width_ + c.x];
}

std::vector<CellIndex> DistanceField::path_to(CellIndex c) const {
  if (!reachable(c)) return {};
  std::vector<CellIndex> path;
  auto idx = static_cast<std::int32_t>(c.y * width_ + c.x);
  while (idx >= 0) {
    path.push_back({idx % width_, idx / width_});
    idx = parent_[static_cast<std::size_t>(idx)];
  }
  std::reverse(path.begin(), path.end());
  return path;
}

std::optional<std::vector<CellIndex>> astar_path(const Traversability& trav, CellIndex from, CellIndex to,
                                                 double resolution) {
  if (!trav.contains(from) || !trav.contains(to)) return std::nullopt;
  if (from == to) return std::vector<CellIndex>{from};
  if (!trav.traversable(to)) return std::nullopt;
  auto heuristic = [&](CellIndex c) {
    const double dx = std::abs(c.x - to.x), dy = std::abs(c.y - to.y);
    return resolution * (std::max(dx, dy) + (std::numbers::sqrt2 - 1.0) * std::min(dx, dy));
  };
  const std::size_t n = static_cast<std::size_t>(trav.width()) * trav.height();
  std::vector<double> g(n, DistanceField::kUnreachable);
  std::vector<std::int32_t> parent(n, -1);
  std::vector<std::uint8_t> closed(n, 0);
  MinQueue open;
  const auto src = static_cast<std::int32_t>(trav.index(from));
  g[static_cast<std::size_t>(src)] = 0.0;
  open.push({heuristic(from), src});
  const auto goal = static_cast<std::int32_t>(trav.index(to));
  const int w = trav.width();
  while (!open.empty()) {
    const auto [f, idx] = open.top();
    open.pop();
    const auto u = static_cast<std::size_t>(idx);
    if (closed[u]) continue;
    closed[u] = 1;
    if (idx == goal) break;
    const CellIndex c{idx % w, idx / w};
    for (const auto& m : kMoves) {
      if (!move_allowed(trav, c, m)) continue;
      const CellIndex nb{c.x + m.dx, c.y + m.dy};
      const auto v = trav.index(nb);
      const double ng = g[u] + m.cost * resolution;
      if (ng < g[v]) {
        g[v] = ng;
        parent[v] = idx;
        open.push({ng + heuristic(nb), static_cast<std::int32_t>(v)});
      }
    }
  }
  if (g[static_cast<std::size_t>(goal)] == DistanceField::kUnreachable) return std::nullopt;
  std::vector<CellIndex> path;
  for (auto idx = goal; idx >= 0; idx = parent[static_cast<std::size_t>(idx)]) path.push_back({idx % w, idx / w});
  std::reverse(path.begin(), path.end());
  return path;
}

}  // namespace nbvlearn
