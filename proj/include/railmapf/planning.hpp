#pragma once

// Timed paths, solutions, an independent collision checker, and the
// safe-interval reservation table used by the planners.

#include <algorithm>
#include <climits>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "railmapf/rail_core.hpp"
#include "railmapf/sim_engine.hpp"

namespace railmapf {

inline constexpr int kForever = INT_MAX;

/// Position of one agent at every timestep from start_time to its arrival.
/// An agent that starts off the grid is off the grid before start_time; at
/// arrival (the last entry) it stands on its target and vanishes afterwards.
struct TimedPath {
  int agent = -1;
  int start_time = 0;
  bool starts_off_grid = true;
  std::vector<StateId> states;

  bool empty() const { return states.empty(); }
  int arrival() const { return start_time + static_cast<int>(states.size()) - 1; }

  std::optional<StateId> at(int t) const {
    if (states.empty() || t < start_time || t > arrival()) return std::nullopt;
    return states[static_cast<size_t>(t - start_time)];
  }
  bool operator==(const TimedPath&) const = default;
};

struct Solution {
  std::vector<TimedPath> paths;  // indexed by agent; empty when unplanned

  Solution() = default;
  explicit Solution(size_t n) : paths(n) {}

  size_t size() const { return paths.size(); }
  bool planned(int agent) const { return !paths[static_cast<size_t>(agent)].empty(); }
  int num_planned() const {
    return static_cast<int>(std::count_if(paths.begin(), paths.end(), [](const TimedPath& p) { return !p.empty(); }));
  }

  /// Sum of arrival timesteps over planned agents (travel counted from 0).
  int64_t cost() const {
    int64_t c = 0;
    for (const TimedPath& p : paths)
      if (!p.empty()) c += p.arrival();
    return c;
  }
  int makespan() const {
    int m = 0;
    for (const TimedPath& p : paths)
      if (!p.empty()) m = std::max(m, p.arrival());
    return m;
  }
  bool operator==(const Solution&) const = default;
};

// ---------------------------------------------------------------------------
// Collision checker. Written against the path representation only so it can
// serve as an oracle for every planner.

enum class ConflictKind : uint8_t { Vertex, Swap, IllegalMove, BadEndpoint };

struct Conflict {
  ConflictKind kind;
  int a = -1;
  int b = -1;
  int t = 0;
  int cell = -1;
};

inline std::string to_string(ConflictKind k) {
  switch (k) {
    case ConflictKind::Vertex: return "vertex";
    case ConflictKind::Swap: return "swap";
    case ConflictKind::IllegalMove: return "illegal-move";
    case ConflictKind::BadEndpoint: return "bad-endpoint";
  }
  return "?";
}

/// All conflicts among planned paths, plus per-path legality problems.
/// `specs` may be empty to skip origin/target checks.
inline std::vector<Conflict> check_solution(const RailGrid& grid, const Solution& sol,
                                            const std::vector<AgentSpec>& specs = {}) {
  std::vector<Conflict> out;
  int horizon = 0;
  for (size_t i = 0; i < sol.paths.size(); ++i) {
    const TimedPath& p = sol.paths[i];
    if (p.empty()) continue;
    const int id = static_cast<int>(i);
    horizon = std::max(horizon, p.arrival());
    for (size_t k = 1; k < p.states.size(); ++k) {
      const StateId a = p.states[k - 1], b = p.states[k];
      if (a == b) continue;
      bool legal = false;
      for_each_successor(grid, a, [&](StateId n, Direction) { legal = legal || n == b; });
      if (!legal) out.push_back({ConflictKind::IllegalMove, id, -1, p.start_time + static_cast<int>(k), state_cell(b)});
    }
    if (!specs.empty()) {
      const AgentSpec& s = specs[i];
      const bool bad_start = p.starts_off_grid
                                 ? (p.states.front() != make_state(grid.index(s.origin), s.direction) || p.start_time < 1)
                                 : false;
      const bool bad_end = state_cell(p.states.back()) != grid.index(s.target);
      bool early_target = false;
      for (size_t k = 0; k + 1 < p.states.size(); ++k)
        if (state_cell(p.states[k]) == grid.index(s.target)) early_target = true;
      if (bad_start || bad_end || early_target)
        out.push_back({ConflictKind::BadEndpoint, id, -1, p.start_time, state_cell(p.states.front())});
    }
  }
  for (int t = 0; t <= horizon; ++t) {
    std::vector<std::pair<int, int>> occ;  // (cell, agent)
    for (size_t i = 0; i < sol.paths.size(); ++i)
      if (auto s = sol.paths[i].at(t)) occ.push_back({state_cell(*s), static_cast<int>(i)});
    std::sort(occ.begin(), occ.end());
    for (size_t k = 1; k < occ.size(); ++k)
      if (occ[k].first == occ[k - 1].first)
        out.push_back({ConflictKind::Vertex, occ[k - 1].second, occ[k].second, t, occ[k].first});
  }
  for (size_t i = 0; i < sol.paths.size(); ++i)
    for (size_t j = i + 1; j < sol.paths.size(); ++j) {
      const TimedPath &p = sol.paths[i], &q = sol.paths[j];
      if (p.empty() || q.empty()) continue;
      const int lo = std::max(p.start_time, q.start_time) + 1;
      const int hi = std::min(p.arrival(), q.arrival());
      for (int t = lo; t <= hi; ++t) {
        const int pa = state_cell(*p.at(t - 1)), pb = state_cell(*p.at(t));
        const int qa = state_cell(*q.at(t - 1)), qb = state_cell(*q.at(t));
        if (pa != pb && pa == qb && pb == qa)
          out.push_back({ConflictKind::Swap, static_cast<int>(i), static_cast<int>(j), t, pb});
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Safe-interval table

struct TimeInterval {
  int lo = 0;
  int hi = 0;  // inclusive; kForever for unbounded
  bool operator==(const TimeInterval&) const = default;
};

/// Per-cell occupied intervals plus directed move records for swap checks.
class SafeIntervalTable {
 public:
  SafeIntervalTable() = default;
  explicit SafeIntervalTable(int num_cells) : occupied_(static_cast<size_t>(num_cells)) {}

  int num_cells() const { return static_cast<int>(occupied_.size()); }

  void reserve_cell(int cell, int lo, int hi, int agent) {
    auto& v = occupied_[static_cast<size_t>(cell)];
    const Occupancy occ{lo, hi, agent};
    v.insert(std::upper_bound(v.begin(), v.end(), occ,
                              [](const Occupancy& a, const Occupancy& b) { return a.lo < b.lo; }),
             occ);
  }

  void release_cell(int cell, int lo, int hi, int agent) {
    auto& v = occupied_[static_cast<size_t>(cell)];
    auto it = std::find_if(v.begin(), v.end(),
                           [&](const Occupancy& o) { return o.lo == lo && o.hi == hi && o.agent == agent; });
    if (it != v.end()) v.erase(it);
  }

  /// Occupies each cell of the path over its visit span and records every move.
  void reserve_path(const TimedPath& path) { apply(path, true); }
  void release_path(const TimedPath& path) { apply(path, false); }

  bool is_free(int cell, int t) const {
    for (const Occupancy& o : occupied_[static_cast<size_t>(cell)]) {
      if (o.lo > t) break;
      if (o.hi >= t) return false;
    }
    return true;
  }

  /// Occupying agent at (cell, t), or -1.
  int occupant(int cell, int t) const {
    for (const Occupancy& o : occupied_[static_cast<size_t>(cell)]) {
      if (o.lo > t) break;
      if (o.hi >= t) return o.agent;
    }
    return -1;
  }

  /// True iff some reserved agent moves out of `from` in direction `d`, entering the neighbour at time t.
  bool move_reserved(int from, Direction d, int t) const { return moves_.count(move_key(from, d, t)) > 0; }

  /// True iff moving from `from` in direction `d` arriving at time t would swap with a reservation.
  bool swap_conflict(const RailGrid& grid, int from, Direction d, int t) const {
    const auto to = grid.neighbor(from, d);
    return to && move_reserved(*to, opposite(d), t);
  }

  /// Maximal free intervals of a cell intersected with [0, horizon].
  std::vector<TimeInterval> safe_intervals(int cell, int horizon) const {
    std::vector<TimeInterval> out;
    int next = 0;
    for (const Occupancy& o : occupied_[static_cast<size_t>(cell)]) {
      if (o.lo > next) out.push_back({next, std::min(o.lo - 1, horizon)});
      if (o.hi == kForever) {
        next = kForever;
        break;
      }
      next = std::max(next, o.hi + 1);
      if (next > horizon) break;
    }
    if (next <= horizon) out.push_back({next, horizon});
    out.erase(std::remove_if(out.begin(), out.end(), [](const TimeInterval& iv) { return iv.lo > iv.hi; }),
              out.end());
    return out;
  }

 private:
  struct Occupancy {
    int lo, hi, agent;
  };

  static uint64_t move_key(int from, Direction d, int t) {
    return (static_cast<uint64_t>(static_cast<uint32_t>(make_state(from, d))) << 32) | static_cast<uint32_t>(t);
  }

  void apply(const TimedPath& path, bool add) {
    if (path.empty()) return;
    size_t k = 0;
    while (k < path.states.size()) {
      const int cell = state_cell(path.states[k]);
      size_t e = k;
      while (e + 1 < path.states.size() && state_cell(path.states[e + 1]) == cell) ++e;
      const int lo = path.start_time + static_cast<int>(k), hi = path.start_time + static_cast<int>(e);
      if (add) reserve_cell(cell, lo, hi, path.agent);
      else release_cell(cell, lo, hi, path.agent);
      if (e + 1 < path.states.size()) {
        const uint64_t key = move_key(cell, state_heading(path.states[e + 1]), hi + 1);
        if (add) moves_.insert(key);
        else moves_.erase(key);
      }
      k = e + 1;
    }
  }

  std::vector<std::vector<Occupancy>> occupied_;
  std::unordered_set<uint64_t> moves_;
};

// ---------------------------------------------------------------------------
// Plan files: {"agents": [{"agent", "start", "off_grid", "cells": [[r,c,"E"], ...]}], "cost"}

inline nlohmann::json solution_to_json(const RailGrid& grid, const Solution& sol) {
  nlohmann::json agents = nlohmann::json::array();
  for (size_t i = 0; i < sol.paths.size(); ++i) {
    const TimedPath& p = sol.paths[i];
    nlohmann::json cells = nlohmann::json::array();
    for (StateId s : p.states) {
      const Cell c = grid.cell(state_cell(s));
      cells.push_back({c.row, c.col, std::string(1, direction_char(state_heading(s)))});
    }
    agents.push_back({{"agent", static_cast<int>(i)},
                      {"start", p.start_time},
                      {"off_grid", p.starts_off_grid},
                      {"arrival", p.empty() ? -1 : p.arrival()},
                      {"cells", cells}});
  }
  return {{"agents", agents}, {"cost", sol.cost()}};
}

inline Solution solution_from_json(const RailGrid& grid, const nlohmann::json& j) {
  const auto& agents = j.at("agents");
  Solution sol(agents.size());
  for (const auto& a : agents) {
    const int id = a.at("agent").get<int>();
    if (id < 0 || static_cast<size_t>(id) >= sol.paths.size()) throw std::runtime_error("plan: agent id out of range");
    TimedPath& p = sol.paths[static_cast<size_t>(id)];
    p.start_time = a.at("start").get<int>();
    p.starts_off_grid = a.value("off_grid", true);
    for (const auto& c : a.at("cells")) {
      const Cell cell{c.at(0).get<int>(), c.at(1).get<int>()};
      if (!grid.in_bounds(cell)) throw std::runtime_error("plan: cell out of bounds");
      p.states.push_back(make_state(grid.index(cell), parse_direction(c.at(2).get<std::string>())));
    }
    if (!p.states.empty()) p.agent = id;
  }
  return sol;
}

}  // namespace railmapf
