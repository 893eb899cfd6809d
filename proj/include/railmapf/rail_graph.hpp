#pragma once

// Directed (cell, heading) state graph, distance maps, and the condensed
// decision-cell graph.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "railmapf/rail_core.hpp"

namespace railmapf {

/// Edge of the rail graph. In full form `length` is 1 and `corridor` is empty;
/// in condensed form `corridor` lists the intermediate states passed through.
struct GraphEdge {
  int to = 0;  // vertex index
  int length = 1;
  Direction exit = Direction::N;
  std::vector<StateId> corridor;
};

class DirectedRailGraph {
 public:
  DirectedRailGraph() = default;

  bool condensed() const { return condensed_; }
  const RailGrid& grid() const { return *grid_; }
  int num_vertices() const { return static_cast<int>(states_.size()); }
  int num_edges() const { return static_cast<int>(edges_.size()); }
  StateId state(int v) const { return states_[static_cast<size_t>(v)]; }
  const std::vector<StateId>& states() const { return states_; }

  /// Vertex index of a state, or -1 if the state is not a vertex.
  int vertex(StateId s) const {
    if (s < 0 || static_cast<size_t>(s) >= index_.size()) return -1;
    return index_[static_cast<size_t>(s)];
  }

  std::span<const GraphEdge> out_edges(int v) const {
    return {edges_.data() + offsets_[static_cast<size_t>(v)],
            edges_.data() + offsets_[static_cast<size_t>(v) + 1]};
  }

  /// Incoming edges as (source vertex, edge index).
  std::span<const std::pair<int, int>> in_edges(int v) const {
    return {reverse_.data() + rev_offsets_[static_cast<size_t>(v)],
            reverse_.data() + rev_offsets_[static_cast<size_t>(v) + 1]};
  }
  const GraphEdge& edge(int e) const { return edges_[static_cast<size_t>(e)]; }

  friend DirectedRailGraph build_graph(std::shared_ptr<const RailGrid> grid, bool condensed);

 private:
  void finish_reverse() {
    const size_t n = states_.size();
    std::vector<int> count(n + 1, 0);
    for (const GraphEdge& e : edges_) ++count[static_cast<size_t>(e.to) + 1];
    rev_offsets_.assign(n + 1, 0);
    for (size_t i = 0; i < n; ++i) rev_offsets_[i + 1] = rev_offsets_[i] + count[i + 1];
    reverse_.assign(edges_.size(), {0, 0});
    std::vector<int> fill(rev_offsets_.begin(), rev_offsets_.end() - 1);
    for (size_t v = 0; v < n; ++v)
      for (int e = offsets_[v]; e < offsets_[v + 1]; ++e) {
        const int to = edges_[static_cast<size_t>(e)].to;
        reverse_[static_cast<size_t>(fill[static_cast<size_t>(to)]++)] = {static_cast<int>(v), e};
      }
  }

  std::shared_ptr<const RailGrid> grid_;
  bool condensed_ = false;
  std::vector<StateId> states_;
  std::vector<int> index_;
  std::vector<int> offsets_;
  std::vector<GraphEdge> edges_;
  std::vector<int> rev_offsets_;
  std::vector<std::pair<int, int>> reverse_;
};

/// Full form: one vertex per (rail cell, heading) with at least one exit.
/// Condensed form: vertices are the states at decision cells; an edge follows
/// single-exit states until the next decision cell.
inline DirectedRailGraph build_graph(std::shared_ptr<const RailGrid> grid, bool condensed = false) {
  DirectedRailGraph g;
  g.grid_ = std::move(grid);
  g.condensed_ = condensed;
  const RailGrid& rg = *g.grid_;
  const auto classes = classify_cells(rg);
  g.index_.assign(static_cast<size_t>(rg.num_cells()) * 4, -1);
  for (int c = 0; c < rg.num_cells(); ++c) {
    if (condensed && classes[static_cast<size_t>(c)] != CellClass::Decision) continue;
    for (Direction h : kDirections) {
      if (rg.exits(c, h).empty()) continue;
      g.index_[static_cast<size_t>(make_state(c, h))] = static_cast<int>(g.states_.size());
      g.states_.push_back(make_state(c, h));
    }
  }
  g.offsets_.push_back(0);
  for (StateId s : g.states_) {
    for_each_successor(rg, s, [&](StateId next, Direction exit) {
      if (!condensed) {
        g.edges_.push_back({g.index_[static_cast<size_t>(next)], 1, exit, {}});
        return;
      }
      GraphEdge e{-1, 1, exit, {}};
      StateId cur = next;
      const size_t limit = g.index_.size();
      while (g.index_[static_cast<size_t>(cur)] < 0 && e.corridor.size() <= limit) {
        e.corridor.push_back(cur);
        std::optional<StateId> following;
        for_each_successor(rg, cur, [&](StateId n2, Direction) { following = n2; });
        if (!following) break;
        cur = *following;
        ++e.length;
      }
      if (g.index_[static_cast<size_t>(cur)] < 0) return;  // corridor without decision cells
      e.to = g.index_[static_cast<size_t>(cur)];
      g.edges_.push_back(std::move(e));
    });
    g.offsets_.push_back(static_cast<int>(g.edges_.size()));
  }
  g.finish_reverse();
  return g;
}

inline DirectedRailGraph build_graph(const RailGrid& grid, bool condensed = false) {
  return build_graph(std::make_shared<const RailGrid>(grid), condensed);
}

// ---------------------------------------------------------------------------
// Distance maps

inline constexpr int32_t kUnreachable = -1;

/// Shortest number of moves from each (cell, heading) state to any state at the target cell.
class DistanceMap {
 public:
  DistanceMap() = default;
  DistanceMap(Cell target, int target_index, std::vector<int32_t> dist)
      : target_(target), target_index_(target_index), dist_(std::move(dist)) {}

  Cell target() const { return target_; }
  int target_index() const { return target_index_; }

  /// Raw value; kUnreachable for unreachable or invalid states.
  int32_t raw(StateId s) const { return dist_[static_cast<size_t>(s)]; }
  std::optional<int> at(StateId s) const {
    const int32_t d = dist_[static_cast<size_t>(s)];
    if (d == kUnreachable) return std::nullopt;
    return d;
  }
  std::optional<int> at(int cell, Direction heading) const { return at(make_state(cell, heading)); }
  bool reachable(StateId s) const { return dist_[static_cast<size_t>(s)] != kUnreachable; }
  size_t size() const { return dist_.size(); }

 private:
  Cell target_{};
  int target_index_ = -1;
  std::vector<int32_t> dist_;
};

/// Reverse breadth-first search from the target over the full state space.
inline DistanceMap distance_map(const RailGrid& grid, Cell target) {
  const int goal = grid.index(target);
  std::vector<int32_t> dist(static_cast<size_t>(grid.num_cells()) * 4, kUnreachable);
  std::queue<StateId> q;
  for (Direction h : kDirections) {
    if (grid.exits(goal, h).empty()) continue;
    dist[static_cast<size_t>(make_state(goal, h))] = 0;
    q.push(make_state(goal, h));
  }
  while (!q.empty()) {
    const StateId v = q.front();
    q.pop();
    const int cell = state_cell(v);
    const Direction arrived = state_heading(v);
    const auto prev = grid.neighbor(cell, opposite(arrived));
    if (!prev) continue;
    for (Direction h : kDirections) {
      if (!grid.at(*prev).has(h, arrived)) continue;
      const StateId u = make_state(*prev, h);
      if (dist[static_cast<size_t>(u)] != kUnreachable) continue;
      dist[static_cast<size_t>(u)] = dist[static_cast<size_t>(v)] + 1;
      q.push(u);
    }
  }
  return DistanceMap(target, goal, std::move(dist));
}

inline DistanceMap distance_map(const DirectedRailGraph& graph, Cell target) {
  if (!graph.condensed()) return distance_map(graph.grid(), target);
  // Condensed: Dijkstra over decision vertices, seeded by corridors that pass the target.
  const RailGrid& grid = graph.grid();
  const int goal = grid.index(target);
  const int n = graph.num_vertices();
  std::vector<int64_t> best(static_cast<size_t>(n), INT64_MAX);
  using Item = std::pair<int64_t, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  for (int v = 0; v < n; ++v) {
    int64_t d = INT64_MAX;
    if (state_cell(graph.state(v)) == goal) d = 0;
    for (const GraphEdge& e : graph.out_edges(v))
      for (size_t k = 0; k < e.corridor.size(); ++k)
        if (state_cell(e.corridor[k]) == goal) d = std::min<int64_t>(d, static_cast<int64_t>(k) + 1);
    if (d < best[static_cast<size_t>(v)]) {
      best[static_cast<size_t>(v)] = d;
      open.push({d, v});
    }
  }
  while (!open.empty()) {
    const auto [d, v] = open.top();
    open.pop();
    if (d != best[static_cast<size_t>(v)]) continue;
    for (const auto& [u, e] : graph.in_edges(v)) {
      const int64_t nd = d + graph.edge(e).length;
      if (nd < best[static_cast<size_t>(u)]) {
        best[static_cast<size_t>(u)] = nd;
        open.push({nd, u});
      }
    }
  }
  // Expand to every state: corridor states inherit from the edge they lie on.
  std::vector<int32_t> dist(static_cast<size_t>(grid.num_cells()) * 4, kUnreachable);
  auto relax = [&](StateId s, int64_t d) {
    if (d == INT64_MAX) return;
    int32_t& slot = dist[static_cast<size_t>(s)];
    if (slot == kUnreachable || d < slot) slot = static_cast<int32_t>(d);
  };
  for (int v = 0; v < n; ++v) {
    relax(graph.state(v), best[static_cast<size_t>(v)]);
    for (const GraphEdge& e : graph.out_edges(v)) {
      const int64_t tail = best[static_cast<size_t>(e.to)];
      const int m = static_cast<int>(e.corridor.size());
      int hit = -1;  // first corridor position on the target
      for (int k = m - 1; k >= 0; --k) {
        if (state_cell(e.corridor[static_cast<size_t>(k)]) == goal) hit = k;
      }
      for (int k = 0; k < m; ++k) {
        int64_t d = tail == INT64_MAX ? INT64_MAX : tail + (m - k);
        if (state_cell(e.corridor[static_cast<size_t>(k)]) == goal) d = 0;
        else if (hit > k) d = std::min<int64_t>(d, hit - k);
        relax(e.corridor[static_cast<size_t>(k)], d);
      }
    }
  }
  // States at the target cell are always 0 (also on corridors that are not between decision cells).
  for (Direction h : kDirections)
    if (!grid.exits(goal, h).empty()) dist[static_cast<size_t>(make_state(goal, h))] = 0;
  return DistanceMap(target, goal, std::move(dist));
}

/// One shortest path of states from `from` to the target (inclusive), exits tried
/// in N, E, S, W order. Empty if unreachable.
inline std::vector<StateId> shortest_path(const RailGrid& grid, const DistanceMap& dm, StateId from) {
  std::vector<StateId> path;
  if (!dm.reachable(from)) return path;
  StateId cur = from;
  path.push_back(cur);
  while (dm.raw(cur) > 0) {
    std::optional<StateId> next;
    for_each_successor(grid, cur, [&](StateId n, Direction) {
      if (!next && dm.raw(n) == dm.raw(cur) - 1) next = n;
    });
    if (!next) return {};
    cur = *next;
    path.push_back(cur);
  }
  return path;
}

/// Thread-safe memo of distance maps keyed by target cell.
class DistanceCache {
 public:
  explicit DistanceCache(std::shared_ptr<const RailGrid> grid) : grid_(std::move(grid)) {}

  const RailGrid& grid() const { return *grid_; }
  std::shared_ptr<const RailGrid> grid_ptr() const { return grid_; }

  std::shared_ptr<const DistanceMap> get(Cell target) {
    const int key = grid_->index(target);
    {
      std::lock_guard lock(mu_);
      auto it = maps_.find(key);
      if (it != maps_.end()) return it->second;
    }
    auto dm = std::make_shared<const DistanceMap>(distance_map(*grid_, target));
    std::lock_guard lock(mu_);
    return maps_.emplace(key, std::move(dm)).first->second;
  }

 private:
  std::shared_ptr<const RailGrid> grid_;
  std::mutex mu_;
  std::map<int, std::shared_ptr<const DistanceMap>> maps_;
};

/// Graphviz rendering; vertices are labelled "row,col heading".
inline std::string to_dot(const DirectedRailGraph& graph) {
  std::ostringstream out;
  out << "digraph rail {\n";
  for (int v = 0; v < graph.num_vertices(); ++v) {
    const Cell c = graph.grid().cell(state_cell(graph.state(v)));
    out << "  v" << v << " [label=\"" << c.row << ',' << c.col << ' ' << direction_char(state_heading(graph.state(v)))
        << "\"];\n";
  }
  for (int v = 0; v < graph.num_vertices(); ++v)
    for (const GraphEdge& e : graph.out_edges(v))
      out << "  v" << v << " -> v" << e.to << " [label=\"" << e.length << "\"];\n";
  out << "}\n";
  return out.str();
}

}  // namespace railmapf
