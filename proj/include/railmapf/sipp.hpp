#pragma once

// Single-agent planners against a SafeIntervalTable: safe-interval path
// planning and a time-expanded A* used as its oracle.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <queue>
#include <unordered_map>
#include <vector>

#include "railmapf/planning.hpp"
#include "railmapf/rail_graph.hpp"

namespace railmapf {

/// Where and when a single-agent search starts.
///  off_grid: the agent may appear on `start` at any time >= start_time.
///  on grid:  the agent stands on `start` at start_time and must stay there
///            until start_time + hold (a running malfunction).
struct PlanRequest {
  int agent = -1;
  StateId start = 0;
  bool off_grid = true;
  int start_time = 1;
  int hold = 0;
  int target = 0;  // cell index
  int horizon = 0;
};

inline PlanRequest departure_request(const RailGrid& grid, int agent, const AgentSpec& spec, int earliest,
                                     int horizon) {
  PlanRequest r;
  r.agent = agent;
  r.start = make_state(grid.index(spec.origin), spec.direction);
  r.off_grid = true;
  r.start_time = std::max(earliest, 1);
  r.target = grid.index(spec.target);
  r.horizon = horizon;
  return r;
}

namespace detail {

inline TimedPath make_path(const PlanRequest& req, int first_time, std::vector<std::pair<StateId, int>> visits) {
  // visits: (state, arrival time) in order; waits fill the gaps.
  TimedPath p;
  p.agent = req.agent;
  p.starts_off_grid = req.off_grid;
  p.start_time = first_time;
  for (size_t k = 0; k < visits.size(); ++k) {
    if (k > 0) {
      const int gap = visits[k].second - visits[k - 1].second;
      for (int w = 1; w < gap; ++w) p.states.push_back(visits[k - 1].first);
    }
    p.states.push_back(visits[k].first);
  }
  return p;
}

}  // namespace detail

/// Earliest-arrival path honouring every reservation in `table`, or nullopt when
/// the target cannot be reached by req.horizon.
inline std::optional<TimedPath> sipp_plan(const RailGrid& grid, const DistanceMap& dm, const PlanRequest& req,
                                          const SafeIntervalTable& table) {
  if (!dm.reachable(req.start)) return std::nullopt;
  const int start_cell = state_cell(req.start);
  std::unordered_map<int, std::vector<TimeInterval>> interval_cache;
  auto intervals = [&](int cell) -> const std::vector<TimeInterval>& {
    auto it = interval_cache.find(cell);
    if (it == interval_cache.end()) it = interval_cache.emplace(cell, table.safe_intervals(cell, req.horizon)).first;
    return it->second;
  };

  struct Node {
    StateId state;
    int interval;
    int g;
    int parent;
  };
  std::vector<Node> nodes;
  std::unordered_map<uint64_t, int> best;  // (state, interval) -> earliest g seen
  using Item = std::tuple<int, int, int>;  // f, -g (prefer later progress), node
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  auto key = [](StateId s, int iv) { return (static_cast<uint64_t>(static_cast<uint32_t>(s)) << 20) | iv; };
  auto push = [&](StateId s, int iv, int g, int parent) {
    const uint64_t k = key(s, iv);
    auto it = best.find(k);
    if (it != best.end() && it->second <= g) return;
    best[k] = g;
    nodes.push_back({s, iv, g, parent});
    open.push({g + dm.raw(s), -g, static_cast<int>(nodes.size()) - 1});
  };

  const auto& start_ivs = intervals(start_cell);
  if (req.off_grid) {
    for (size_t i = 0; i < start_ivs.size(); ++i) {
      if (start_ivs[i].hi < req.start_time) continue;
      push(req.start, static_cast<int>(i), std::max(start_ivs[i].lo, req.start_time), -1);
    }
  } else {
    for (size_t i = 0; i < start_ivs.size(); ++i) {
      const TimeInterval& iv = start_ivs[i];
      if (iv.lo <= req.start_time && iv.hi >= req.start_time + req.hold) {
        push(req.start, static_cast<int>(i), req.start_time + req.hold, -1);
        break;
      }
    }
  }

  while (!open.empty()) {
    const auto [f, neg_g, idx] = open.top();
    open.pop();
    const Node cur = nodes[static_cast<size_t>(idx)];
    if (best[key(cur.state, cur.interval)] != cur.g) continue;
    const int cell = state_cell(cur.state);
    if (cell == req.target) {
      std::vector<std::pair<StateId, int>> visits;
      for (int k = idx; k >= 0; k = nodes[static_cast<size_t>(k)].parent)
        visits.push_back({nodes[static_cast<size_t>(k)].state, nodes[static_cast<size_t>(k)].g});
      std::reverse(visits.begin(), visits.end());
      // An on-grid start is occupied from start_time, not from the end of the hold.
      const int first = req.off_grid ? visits.front().second : req.start_time;
      if (!req.off_grid) visits.front().second = req.start_time;
      return detail::make_path(req, first, std::move(visits));
    }
    const int stay_until = intervals(cell)[static_cast<size_t>(cur.interval)].hi;
    for_each_successor(grid, cur.state, [&](StateId next, Direction d) {
      if (!dm.reachable(next)) return;
      const int ncell = state_cell(next);
      const auto& ivs = intervals(ncell);
      for (size_t i = 0; i < ivs.size(); ++i) {
        const TimeInterval& iv = ivs[i];
        if (iv.lo > stay_until + 1) break;
        if (iv.hi < cur.g + 1) continue;
        const int last = std::min(stay_until == kForever ? kForever - 1 : stay_until + 1, iv.hi);
        int t = std::max(cur.g + 1, iv.lo);
        while (t <= last && table.swap_conflict(grid, cell, d, t)) ++t;
        if (t > last || t > req.horizon) continue;
        push(next, static_cast<int>(i), t, idx);
      }
    });
  }
  return std::nullopt;
}

/// Optimal-arrival search over (state, time) pairs up to req.horizon. Uses only
/// point queries on the table so it shares no interval logic with sipp_plan.
inline std::optional<TimedPath> time_expanded_astar(const RailGrid& grid, const DistanceMap& dm,
                                                    const PlanRequest& req, const SafeIntervalTable& table) {
  if (!dm.reachable(req.start)) return std::nullopt;
  constexpr StateId kOff = -1;
  struct Node {
    StateId state;
    int t;
    int parent;
  };
  std::vector<Node> nodes;
  std::unordered_map<uint64_t, uint8_t> closed;
  using Item = std::tuple<int, int, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  auto key = [](StateId s, int t) {
    return (static_cast<uint64_t>(static_cast<uint32_t>(s + 1)) << 32) | static_cast<uint32_t>(t);
  };
  auto h = [&](StateId s) { return s == kOff ? dm.raw(req.start) + 1 : dm.raw(s); };
  auto push = [&](StateId s, int t, int parent) {
    if (t > req.horizon) return;
    if (closed.count(key(s, t))) return;
    nodes.push_back({s, t, parent});
    open.push({t + h(s), -t, static_cast<int>(nodes.size()) - 1});
  };
  if (req.off_grid) {
    push(kOff, req.start_time - 1, -1);
  } else {
    for (int t = req.start_time; t <= req.start_time + req.hold; ++t)
      if (!table.is_free(state_cell(req.start), t)) return std::nullopt;
    push(req.start, req.start_time + req.hold, -1);
  }
  while (!open.empty()) {
    const auto [f, neg_t, idx] = open.top();
    open.pop();
    const Node cur = nodes[static_cast<size_t>(idx)];
    const uint64_t k = key(cur.state, cur.t);
    if (closed.count(k)) continue;
    closed[k] = 1;
    if (cur.state != kOff && state_cell(cur.state) == req.target) {
      TimedPath p;
      p.agent = req.agent;
      p.starts_off_grid = req.off_grid;
      std::vector<StateId> rev;
      int first = cur.t;
      for (int j = idx; j >= 0; j = nodes[static_cast<size_t>(j)].parent) {
        if (nodes[static_cast<size_t>(j)].state == kOff) break;
        rev.push_back(nodes[static_cast<size_t>(j)].state);
        first = nodes[static_cast<size_t>(j)].t;
      }
      std::reverse(rev.begin(), rev.end());
      if (!req.off_grid) {
        rev.insert(rev.begin(), static_cast<size_t>(req.hold), req.start);
        first = req.start_time;
      }
      p.start_time = first;
      p.states = std::move(rev);
      return p;
    }
    const int nt = cur.t + 1;
    if (cur.state == kOff) {
      push(kOff, nt, idx);
      if (nt >= req.start_time && table.is_free(state_cell(req.start), nt)) push(req.start, nt, idx);
      continue;
    }
    const int cell = state_cell(cur.state);
    if (table.is_free(cell, nt)) push(cur.state, nt, idx);
    for_each_successor(grid, cur.state, [&](StateId next, Direction d) {
      if (!dm.reachable(next)) return;
      if (!table.is_free(state_cell(next), nt)) return;
      if (table.swap_conflict(grid, cell, d, nt)) return;
      push(next, nt, idx);
    });
  }
  return std::nullopt;
}

}  // namespace railmapf
