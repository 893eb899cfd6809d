#pragma once

// Execution-time control: visit-order enforcement over a planned Solution,
// partial replanning after malfunctions, conflict-graph priorities, cluster
// traffic lights and departure gating.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "railmapf/controller.hpp"
#include "railmapf/planning.hpp"
#include "railmapf/rail_graph.hpp"
#include "railmapf/sipp.hpp"
#include "railmapf/solver.hpp"

namespace railmapf {

// ---------------------------------------------------------------------------
// Visit order

struct RouteVisit {
  StateId state;
  int time;  // planned entry time
};

/// Distinct-cell visits of `path` from time `from` on (entry time clamped to `from`).
inline std::vector<RouteVisit> route_from(const TimedPath& path, int from) {
  std::vector<RouteVisit> out;
  if (path.empty()) return out;
  const int t0 = std::max(from, path.start_time);
  for (int t = t0; t <= path.arrival(); ++t) {
    const StateId s = *path.at(t);
    if (out.empty() || state_cell(out.back().state) != state_cell(s)) out.push_back({s, t});
  }
  return out;
}

struct VisitRef {
  int agent;
  int index;  // position in the agent's route
  int time;
  bool operator==(const VisitRef&) const = default;
};

/// Per cell, the routes' visits sorted by planned entry time (ties by agent id).
class VisitOrder {
 public:
  VisitOrder() = default;
  explicit VisitOrder(int num_cells) : cells_(static_cast<size_t>(num_cells)) {}

  void add_route(int agent, const std::vector<RouteVisit>& route) {
    for (size_t k = 0; k < route.size(); ++k) {
      auto& list = cells_[static_cast<size_t>(state_cell(route[k].state))];
      const VisitRef v{agent, static_cast<int>(k), route[k].time};
      auto it = std::upper_bound(list.begin(), list.end(), v, [](const VisitRef& a, const VisitRef& b) {
        return a.time != b.time ? a.time < b.time : a.agent < b.agent;
      });
      list.insert(it, v);
    }
  }
  void remove_agent(int agent) {
    for (auto& list : cells_)
      list.erase(std::remove_if(list.begin(), list.end(), [&](const VisitRef& v) { return v.agent == agent; }),
                 list.end());
  }
  const std::vector<VisitRef>& at(int cell) const { return cells_[static_cast<size_t>(cell)]; }
  int num_cells() const { return static_cast<int>(cells_.size()); }

 private:
  std::vector<std::vector<VisitRef>> cells_;
};

class McpDeviation : public std::runtime_error {
 public:
  explicit McpDeviation(int agent)
      : std::runtime_error("agent " + std::to_string(agent) + " left its planned path; replan required"),
        agent_(agent) {}
  int agent() const { return agent_; }

 private:
  int agent_;
};

/// Keeps every cell's visit order as planned. An agent advances to its next
/// planned cell only when every earlier visitor of that cell has exited it (or
/// is exiting it in the same step) and its planned entry time has come.
class McpExecutor {
 public:
  McpExecutor() = default;
  McpExecutor(int num_cells, int num_agents)
      : order_(num_cells), routes_(static_cast<size_t>(num_agents)), progress_(static_cast<size_t>(num_agents), -1) {}

  /// Replaces all routes with the remainder of `sol` from the simulator's current time.
  void load(const Solution& sol, const Simulator& sim) {
    order_ = VisitOrder(sim.grid().num_cells());
    routes_.assign(static_cast<size_t>(sim.num_agents()), {});
    progress_.assign(routes_.size(), -1);
    for (size_t i = 0; i < sol.paths.size() && i < routes_.size(); ++i) {
      const AgentState& a = sim.agent(static_cast<int>(i));
      if (sol.paths[i].empty() || a.phase == AgentPhase::Done) continue;
      set_route(static_cast<int>(i), route_from(sol.paths[i], sim.time()));
      if (a.phase == AgentPhase::OnGrid) progress_[i] = 0;
    }
    sync(sim);
  }

  /// Adds a route for an agent that has none (it must be off the grid).
  void add(int agent, const TimedPath& path, const Simulator& sim) {
    order_.remove_agent(agent);
    set_route(agent, route_from(path, sim.time()));
    progress_[static_cast<size_t>(agent)] = -1;
  }

  bool has_route(int agent) const { return !routes_[static_cast<size_t>(agent)].empty(); }
  const std::vector<RouteVisit>& route(int agent) const { return routes_[static_cast<size_t>(agent)]; }
  int progress(int agent) const { return progress_[static_cast<size_t>(agent)]; }
  const VisitOrder& order() const { return order_; }

  /// True iff the visit (agent, index) has been completed: the agent exited that cell.
  bool completed(const Simulator& sim, int agent, int index) const {
    if (sim.agent(agent).phase == AgentPhase::Done) return true;
    return progress_[static_cast<size_t>(agent)] > index;
  }

  /// Aligns progress with the observed positions.
  void sync(const Simulator& sim) {
    for (int i = 0; i < static_cast<int>(routes_.size()); ++i) {
      const auto& r = routes_[static_cast<size_t>(i)];
      const AgentState& a = sim.agent(i);
      int& p = progress_[static_cast<size_t>(i)];
      if (r.empty()) continue;
      if (a.phase == AgentPhase::Done) {
        p = static_cast<int>(r.size());
        continue;
      }
      if (a.phase == AgentPhase::OffGrid) {
        if (p >= 0) throw McpDeviation(i);
        continue;
      }
      const int cell = sim.grid().index(a.cell);
      if (p >= 0 && state_cell(r[static_cast<size_t>(p)].state) == cell) continue;
      if (p + 1 < static_cast<int>(r.size()) && state_cell(r[static_cast<size_t>(p + 1)].state) == cell) {
        ++p;
        continue;
      }
      throw McpDeviation(i);
    }
  }

  /// Actions for all agents at the simulator's current time.
  std::vector<Action> actions(const Simulator& sim) {
    sync(sim);
    const int n = sim.num_agents();
    const int t = sim.time();
    std::vector<Action> acts(static_cast<size_t>(n), Action::Stop);
    constexpr int kNone = -2, kReady = -1;
    std::vector<int> dep(static_cast<size_t>(n), kNone);  // kReady, kNone or the agent waited on
    for (int i = 0; i < n; ++i) {
      const AgentState& a = sim.agent(i);
      const auto& r = routes_[static_cast<size_t>(i)];
      if (a.phase == AgentPhase::Done) {
        acts[static_cast<size_t>(i)] = Action::DoNothing;
        continue;
      }
      if (a.malfunction_remaining > 0) {
        acts[static_cast<size_t>(i)] = Action::DoNothing;
        continue;
      }
      if (r.empty()) continue;
      const int next = progress_[static_cast<size_t>(i)] + 1;
      if (next >= static_cast<int>(r.size())) continue;
      if (t + 1 < r[static_cast<size_t>(next)].time) continue;
      const int cell = state_cell(r[static_cast<size_t>(next)].state);
      int wait_on = kReady;
      for (const VisitRef& v : order_.at(cell)) {
        if (v.agent == i && v.index == next) break;
        if (completed(sim, v.agent, v.index)) continue;
        const bool inside = sim.agent(v.agent).phase == AgentPhase::OnGrid && progress_[static_cast<size_t>(v.agent)] == v.index;
        if (inside && wait_on == kReady) {
          wait_on = v.agent;
          continue;
        }
        wait_on = kNone;
        break;
      }
      if (wait_on == kReady && sim.occupant(cell) >= 0) wait_on = kNone;
      if (wait_on >= 0 && sim.occupant(cell) != wait_on) wait_on = kNone;
      dep[static_cast<size_t>(i)] = wait_on;
    }
    // Same resolution as the simulator: chains ending in a free cell move, as
    // do rotations of three or more.
    enum : uint8_t { kUnknown, kVisiting, kGo, kHold };
    std::vector<uint8_t> st(static_cast<size_t>(n), kUnknown);
    for (int s = 0; s < n; ++s) {
      if (st[static_cast<size_t>(s)] != kUnknown) continue;
      std::vector<int> chain;
      int cur = s;
      uint8_t verdict = kHold;
      while (true) {
        const uint8_t cs = st[static_cast<size_t>(cur)];
        if (cs == kGo || cs == kHold) {
          verdict = cs;
          break;
        }
        if (cs == kVisiting) {
          const auto pos = std::find(chain.begin(), chain.end(), cur);
          const uint8_t cyc = chain.end() - pos >= 3 ? kGo : kHold;
          for (auto it = pos; it != chain.end(); ++it) st[static_cast<size_t>(*it)] = cyc;
          chain.erase(pos, chain.end());
          verdict = cyc;
          break;
        }
        st[static_cast<size_t>(cur)] = kVisiting;
        chain.push_back(cur);
        const int d = dep[static_cast<size_t>(cur)];
        if (d == kReady) {
          verdict = kGo;
          break;
        }
        if (d == kNone) {
          verdict = kHold;
          break;
        }
        cur = d;
      }
      for (int c : chain)
        if (st[static_cast<size_t>(c)] == kVisiting) st[static_cast<size_t>(c)] = verdict;
    }
    for (int i = 0; i < n; ++i) {
      if (st[static_cast<size_t>(i)] != kGo || dep[static_cast<size_t>(i)] == kNone) continue;
      const AgentState& a = sim.agent(i);
      const RouteVisit& nv = routes_[static_cast<size_t>(i)][static_cast<size_t>(progress_[static_cast<size_t>(i)] + 1)];
      acts[static_cast<size_t>(i)] =
          a.phase == AgentPhase::OffGrid ? Action::MoveForward : action_for_exit(a.heading, state_heading(nv.state));
    }
    return acts;
  }

 private:
  void set_route(int agent, std::vector<RouteVisit> route) {
    order_.add_route(agent, route);
    routes_[static_cast<size_t>(agent)] = std::move(route);
  }

  VisitOrder order_;
  std::vector<std::vector<RouteVisit>> routes_;
  std::vector<int> progress_;
};

inline std::vector<Action> mcp_step(const Simulator& sim, McpExecutor& exec) { return exec.actions(sim); }

/// Timed paths produced by running `exec` from the simulator's current state
/// with no further malfunctions, for at most `horizon` absolute timesteps.
/// Agents that do not arrive keep a truncated path.
inline Solution project(const Simulator& sim, McpExecutor exec, int horizon) {
  Simulator p = sim.projection();
  p.set_t_max(std::max(horizon, sim.time() + 1));
  const int n = sim.num_agents();
  Solution out(static_cast<size_t>(n));
  auto record = [&](const Simulator& s) {
    for (int i = 0; i < n; ++i) {
      const AgentState& a = s.agent(i);
      TimedPath& path = out.paths[static_cast<size_t>(i)];
      if (!exec.has_route(i)) continue;
      if (a.phase == AgentPhase::OffGrid) continue;
      if (a.phase == AgentPhase::Done && (path.empty() || a.arrival_time != s.time())) continue;
      if (path.empty()) {
        path.agent = i;
        path.start_time = s.time();
        path.starts_off_grid = sim.agent(i).phase == AgentPhase::OffGrid;
      }
      path.states.push_back(make_state(s.grid().index(a.cell), a.heading));
    }
  };
  record(p);
  while (!p.terminated()) {
    bool pending = false;
    for (int i = 0; i < n; ++i) pending = pending || (exec.has_route(i) && p.agent(i).phase != AgentPhase::Done);
    if (!pending) break;
    p.step(exec.actions(p));
    record(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Partial replanning

struct ReplanResult {
  Solution solution;
  std::vector<int> affected;
  std::vector<int> improved;
};

/// Agents that, after the trigger, visit a switch or crossing cell on the
/// trigger's remaining route.
inline std::vector<int> affected_agents(const Simulator& sim, const McpExecutor& exec, int trigger) {
  const RailGrid& g = sim.grid();
  std::vector<int> out;
  if (!exec.has_route(trigger)) return out;
  const auto& route = exec.route(trigger);
  std::vector<uint8_t> mark(static_cast<size_t>(sim.num_agents()), 0);
  for (int k = std::max(0, exec.progress(trigger)); k < static_cast<int>(route.size()); ++k) {
    const int cell = state_cell(route[static_cast<size_t>(k)].state);
    if (!is_junction_cell(g.at(cell))) continue;
    bool after = false;
    for (const VisitRef& v : exec.order().at(cell)) {
      if (v.agent == trigger && v.index == k) {
        after = true;
        continue;
      }
      if (after && v.agent != trigger && !exec.completed(sim, v.agent, v.index)) mark[static_cast<size_t>(v.agent)] = 1;
    }
  }
  for (int i = 0; i < sim.num_agents(); ++i)
    if (mark[static_cast<size_t>(i)]) out.push_back(i);
  return out;
}

/// Replans the agents affected by the trigger's malfunction against the
/// projected execution of everyone else. Each affected agent keeps its
/// projected path unless the new one arrives strictly earlier. Returns nullopt
/// when nothing improves or the deadline has already passed.
inline std::optional<ReplanResult> partial_replan(int trigger, const Simulator& sim, const McpExecutor& exec,
                                                  const PlanningContext& ctx, Clock::time_point deadline) {
  if (Clock::now() >= deadline) return std::nullopt;
  if (sim.agent(trigger).malfunction_remaining <= 0) return std::nullopt;
  ReplanResult res;
  res.affected = affected_agents(sim, exec, trigger);
  if (res.affected.empty()) return std::nullopt;
  const int horizon = std::max(ctx.horizon(), sim.time() + ctx.t_max());
  res.solution = project(sim, exec, horizon);
  const Solution projected = res.solution;
  auto arrival_or_max = [&](const TimedPath& p, int agent) {
    if (p.empty() || state_cell(p.states.back()) != ctx.grid().index(ctx.spec(agent).target)) return kForever;
    return p.arrival();
  };
  std::vector<int> order = res.affected;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return arrival_or_max(projected.paths[static_cast<size_t>(a)], a) <
           arrival_or_max(projected.paths[static_cast<size_t>(b)], b);
  });
  SafeIntervalTable table = table_from(ctx, res.solution);
  for (int a : order) {
    if (Clock::now() >= deadline) break;
    TimedPath& cur = res.solution.paths[static_cast<size_t>(a)];
    const AgentState& st = sim.agent(a);
    PlanRequest req = ctx.departure(a, sim.time() + 1);
    req.horizon = horizon;
    if (st.phase == AgentPhase::OnGrid) {
      req.off_grid = false;
      req.start = make_state(sim.grid().index(st.cell), st.heading);
      req.start_time = sim.time();
      req.hold = st.malfunction_remaining;
    }
    table.release_path(cur);
    auto path = sipp_plan(ctx.grid(), *ctx.distances(a), req, table);
    if (path && path->arrival() < arrival_or_max(cur, a)) {
      path->agent = a;
      cur = std::move(*path);
      res.improved.push_back(a);
    }
    table.reserve_path(cur);
  }
  if (res.improved.empty()) return std::nullopt;
  return res;
}

// ---------------------------------------------------------------------------
// Conflict graph and priority levels

struct TimedCell {
  int cell;
  int time;
};

class ConflictGraph {
 public:
  explicit ConflictGraph(int n = 0) : adj_(static_cast<size_t>(n)) {}
  int num_vertices() const { return static_cast<int>(adj_.size()); }
  void add_edge(int a, int b) {
    if (a == b || has_edge(a, b)) return;
    auto& la = adj_[static_cast<size_t>(a)];
    auto& lb = adj_[static_cast<size_t>(b)];
    la.insert(std::lower_bound(la.begin(), la.end(), b), b);
    lb.insert(std::lower_bound(lb.begin(), lb.end(), a), a);
  }
  bool has_edge(int a, int b) const {
    const auto& la = adj_[static_cast<size_t>(a)];
    return std::binary_search(la.begin(), la.end(), b);
  }
  const std::vector<int>& neighbors(int v) const { return adj_[static_cast<size_t>(v)]; }
  int degree(int v) const { return static_cast<int>(adj_[static_cast<size_t>(v)].size()); }
  int max_degree() const {
    int m = 0;
    for (int v = 0; v < num_vertices(); ++v) m = std::max(m, degree(v));
    return m;
  }
  int num_edges() const {
    int e = 0;
    for (const auto& l : adj_) e += static_cast<int>(l.size());
    return e / 2;
  }

 private:
  std::vector<std::vector<int>> adj_;
};

/// Edge (i, j) iff the two routes claim a common cell at times at most `window` apart.
inline ConflictGraph build_conflict_graph(const std::vector<std::vector<TimedCell>>& intents, int window = 50) {
  ConflictGraph g(static_cast<int>(intents.size()));
  std::map<int, std::vector<std::pair<int, int>>> by_cell;  // cell -> (time, agent)
  for (size_t a = 0; a < intents.size(); ++a)
    for (const TimedCell& tc : intents[a]) by_cell[tc.cell].push_back({tc.time, static_cast<int>(a)});
  for (auto& [cell, v] : by_cell) {
    std::sort(v.begin(), v.end());
    for (size_t i = 0; i < v.size(); ++i)
      for (size_t j = i + 1; j < v.size() && v[j].first - v[i].first <= window; ++j)
        g.add_edge(v[i].second, v[j].second);
  }
  return g;
}

inline std::vector<std::vector<TimedCell>> intents_from(const Solution& sol) {
  std::vector<std::vector<TimedCell>> out(sol.paths.size());
  for (size_t i = 0; i < sol.paths.size(); ++i) {
    const TimedPath& p = sol.paths[i];
    for (size_t k = 0; k < p.states.size(); ++k)
      if (k == 0 || state_cell(p.states[k]) != state_cell(p.states[k - 1]))
        out[i].push_back({state_cell(p.states[k]), p.start_time + static_cast<int>(k)});
  }
  return out;
}

/// Greedy colouring by descending degree (ties by id); level 0 is the highest priority.
inline std::vector<int> assign_priorities(const ConflictGraph& g) {
  const int n = g.num_vertices();
  std::vector<int> order(static_cast<size_t>(n));
  for (int v = 0; v < n; ++v) order[static_cast<size_t>(v)] = v;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return g.degree(a) > g.degree(b); });
  std::vector<int> level(static_cast<size_t>(n), -1);
  std::vector<uint8_t> used;
  for (int v : order) {
    used.assign(static_cast<size_t>(g.degree(v)) + 1, 0);
    for (int u : g.neighbors(v)) {
      const int l = level[static_cast<size_t>(u)];
      if (l >= 0 && l < static_cast<int>(used.size())) used[static_cast<size_t>(l)] = 1;
    }
    int l = 0;
    while (used[static_cast<size_t>(l)]) ++l;
    level[static_cast<size_t>(v)] = l;
  }
  return level;
}

// ---------------------------------------------------------------------------
// Traffic lights

struct LightState {
  int occupant = -1;     // agent inside, or -1 (lowest id when several)
  int green_entry = -1;  // entry cell holding the green, or -1
  int green_agent = -1;
  std::map<int, int> waiting;  // entry cell -> first timestep its current waiter asked
};

/// One agent at a time inside each cluster.
class TrafficLights {
 public:
  TrafficLights() = default;
  explicit TrafficLights(const RailGrid& grid) : clusters_(find_clusters(grid)), label_(cluster_labels(grid, clusters_)) {
    lights_.resize(clusters_.size());
  }

  const std::vector<Cluster>& clusters() const { return clusters_; }
  const std::vector<LightState>& lights() const { return lights_; }
  int cluster_of(int cell) const { return label_.empty() ? -1 : label_[static_cast<size_t>(cell)]; }

  /// wants[i]: cell agent i would enter this step (-1 for none). Returns the
  /// permission for each such move; moves that do not enter a cluster are always allowed.
  std::vector<uint8_t> control(const Simulator& sim, const std::vector<int>& wants) {
    const RailGrid& g = sim.grid();
    const int n = sim.num_agents();
    std::vector<uint8_t> allow(static_cast<size_t>(n), 1);
    std::vector<int> inside(clusters_.size(), -1);
    for (int i = 0; i < n; ++i) {
      const AgentState& a = sim.agent(i);
      if (a.phase != AgentPhase::OnGrid) continue;
      const int k = cluster_of(g.index(a.cell));
      if (k >= 0 && inside[static_cast<size_t>(k)] < 0) inside[static_cast<size_t>(k)] = i;
    }
    std::vector<std::vector<std::pair<int, int>>> requests(clusters_.size());  // (entry cell, agent)
    for (int i = 0; i < n; ++i) {
      const int w = wants[static_cast<size_t>(i)];
      if (w < 0) continue;
      const int k = cluster_of(w);
      if (k < 0) continue;
      const AgentState& a = sim.agent(i);
      const int from = a.phase == AgentPhase::OnGrid ? g.index(a.cell) : -1;
      if (from >= 0 && cluster_of(from) == k) continue;  // moving within the cluster
      requests[static_cast<size_t>(k)].push_back({from >= 0 ? from : w, i});
      allow[static_cast<size_t>(i)] = 0;
    }
    for (size_t k = 0; k < clusters_.size(); ++k) {
      LightState& L = lights_[k];
      L.occupant = inside[k];
      auto& req = requests[k];
      std::map<int, int> waiting;
      for (const auto& [entry, agent] : req) {
        auto it = L.waiting.find(entry);
        waiting[entry] = it != L.waiting.end() ? it->second : sim.time();
      }
      L.waiting = std::move(waiting);
      if (L.green_agent >= 0) {
        const bool still = std::any_of(req.begin(), req.end(), [&](const auto& r) { return r.second == L.green_agent; });
        if (!still || L.occupant >= 0) L.green_agent = L.green_entry = -1;
      }
      if (L.occupant >= 0) continue;
      if (L.green_agent < 0 && !req.empty()) {
        std::sort(req.begin(), req.end());
        auto best = req.begin();
        for (auto it = req.begin(); it != req.end(); ++it)
          if (L.waiting[it->first] < L.waiting[best->first]) best = it;
        L.green_entry = best->first;
        L.green_agent = best->second;
      }
      if (L.green_agent >= 0) allow[static_cast<size_t>(L.green_agent)] = 1;
    }
    return allow;
  }

 private:
  std::vector<Cluster> clusters_;
  std::vector<int> label_;
  std::vector<LightState> lights_;
};

/// Maximum number of agents in any single cluster at the simulator's current time.
inline int max_cluster_occupancy(const RailGrid& grid, const std::vector<int>& labels,
                                 const std::vector<std::optional<PositionRecord>>& positions, int num_clusters) {
  std::vector<int> count(static_cast<size_t>(num_clusters), 0);
  int m = 0;
  for (const auto& p : positions) {
    if (!p) continue;
    const int k = labels[static_cast<size_t>(grid.index(p->cell))];
    if (k >= 0) m = std::max(m, ++count[static_cast<size_t>(k)]);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Departure gate

struct GateFeatures {
  double distance_ratio = 0;  // shortest-path distance / remaining time
  double density = 0;         // on-grid agents / soft cap
  double degree = 0;          // conflict-graph degree
};

using SuccessPredictor = std::function<double(const GateFeatures&)>;

struct LogisticPredictor {
  double b0 = 4.0, b1 = -3.0, b2 = -4.0, b3 = -0.25;
  double operator()(const GateFeatures& f) const {
    const double z = b0 + b1 * f.distance_ratio + b2 * f.density + b3 * f.degree;
    return 1.0 / (1.0 + std::exp(-z));
  }
};

struct DepartureGate {
  SuccessPredictor predictor = LogisticPredictor{};
  double initial_threshold = 0.92;
  double final_threshold = 0.5;
  double decay_share = 0.5;  // fraction of t_max over which the threshold decays
  int soft_cap = 0;          // 0: derived from the grid size

  double threshold(int t, int t_max) const {
    const double span = decay_share * t_max;
    if (span <= 0) return final_threshold;
    const double x = std::clamp(t / span, 0.0, 1.0);
    return initial_threshold + (final_threshold - initial_threshold) * x;
  }
  int cap(const RailGrid& grid) const {
    return soft_cap > 0 ? soft_cap : std::max(4, (grid.width() + grid.height()) / 4);
  }
};

struct GateCandidate {
  int agent;
  GateFeatures features;
};

/// Candidates allowed to depart: predicted success above the threshold while the
/// number of on-grid agents is below the soft cap.
inline std::vector<int> departure_gate(const std::vector<GateCandidate>& candidates, const DepartureGate& gate, int t,
                                       int t_max, int on_grid, int cap) {
  std::vector<int> out;
  if (on_grid >= cap) return out;
  const double thr = gate.threshold(t, t_max);
  for (const GateCandidate& c : candidates)
    if (gate.predictor(c.features) > thr) out.push_back(c.agent);
  return out;
}

// ---------------------------------------------------------------------------
// Controllers

struct PlanControllerConfig {
  bool lns = false;
  SolverConfig solver;
  int lazy_threshold = -1;  // agents planned up front; -1 plans all
  int active_cap = -1;      // lazy: plan more while fewer planned agents are active; -1 = lazy_threshold
  bool partial_replan = true;
  double replan_share = 0.5;  // fraction of the step deadline available to replanning
};

/// Prioritized planning (optionally improved by LNS) executed under the visit-order policy.
class PlanController : public Controller {
 public:
  explicit PlanController(PlanControllerConfig cfg = {}) : cfg_(std::move(cfg)) {}

  std::string name() const override { return cfg_.lns ? "lns-mcp" : "pp-sipp-mcp"; }

  void reset(const Simulator& sim, Clock::time_point deadline) override {
    ctx_ = std::make_unique<PlanningContext>(sim.grid_ptr(), sim.specs(), sim.t_max());
    const auto order = priority_order(*ctx_, all_agents(*ctx_), cfg_.solver.ordering);
    const int threshold = cfg_.lazy_threshold < 0 ? ctx_->num_agents() : cfg_.lazy_threshold;
    const LazySplit split = lazy_partition(*ctx_, order, threshold);
    PlanResult pr = prioritized_plan(*ctx_, split.plan_now);
    solution_ = std::move(pr.solution);
    if (cfg_.lns && Clock::now() < deadline) {
      const auto cap = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                          std::chrono::duration<double>(cfg_.solver.time_budget_s));
      solution_ = lns_improve(*ctx_, std::move(solution_), cfg_.solver, std::min(deadline, cap), &lns_stats_);
    }
    deferred_ = split.deferred;
    deferred_.insert(deferred_.end(), pr.failed.begin(), pr.failed.end());
    exec_ = McpExecutor(sim.grid().num_cells(), sim.num_agents());
    exec_.load(solution_, sim);
    replans_ = 0;
  }

  std::vector<Action> act(const Simulator& sim, Clock::time_point deadline) override {
    exec_.sync(sim);
    if (cfg_.partial_replan && sim.time() > 0) {
      const auto start = Clock::now();
      const auto budget = std::chrono::duration_cast<Clock::duration>((deadline - start) * cfg_.replan_share);
      for (const MalfunctionEvent& m : sim.last_outcome().malfunctions) {
        if (!exec_.has_route(m.agent)) continue;
        if (auto r = partial_replan(m.agent, sim, exec_, *ctx_, start + budget)) {
          for (size_t i = 0; i < solution_.paths.size(); ++i)
            if (exec_.has_route(static_cast<int>(i))) solution_.paths[i] = r->solution.paths[i];
          exec_.load(solution_, sim);
          ++replans_;
        }
      }
    }
    plan_deferred(sim);
    return exec_.actions(sim);
  }

  const Solution& solution() const { return solution_; }
  const McpExecutor& executor() const { return exec_; }
  const LnsStats& lns_stats() const { return lns_stats_; }
  int replans() const { return replans_; }

 private:
  void plan_deferred(const Simulator& sim) {
    if (deferred_.empty()) return;
    const int cap = cfg_.active_cap >= 0 ? cfg_.active_cap : std::max(1, cfg_.lazy_threshold);
    int active = 0;
    for (int i = 0; i < sim.num_agents(); ++i)
      if (exec_.has_route(i) && sim.agent(i).phase != AgentPhase::Done) ++active;
    if (active >= cap) return;
    SafeIntervalTable table = table_from(*ctx_, solution_);
    std::vector<int> still;
    for (int a : deferred_) {
      if (active >= cap) {
        still.push_back(a);
        continue;
      }
      auto path = sipp_plan(ctx_->grid(), *ctx_->distances(a), ctx_->departure(a, sim.time() + 1), table);
      if (!path) {
        still.push_back(a);
        continue;
      }
      table.reserve_path(*path);
      solution_.paths[static_cast<size_t>(a)] = *path;
      exec_.add(a, *path, sim);
      ++active;
    }
    deferred_ = std::move(still);
  }

  PlanControllerConfig cfg_;
  std::unique_ptr<PlanningContext> ctx_;
  Solution solution_;
  McpExecutor exec_;
  std::vector<int> deferred_;
  LnsStats lns_stats_;
  int replans_ = 0;
};

struct HeuristicConfig {
  bool traffic_lights = true;
  bool gate = true;
  DepartureGate departure;
  int conflict_window = 50;
};

/// Greedy shortest-path driving with traffic lights at clusters and a gated,
/// priority-ordered release of waiting agents.
class HeuristicPolicy : public AgentPolicy {
 public:
  explicit HeuristicPolicy(HeuristicConfig cfg = {}) : cfg_(std::move(cfg)) {}
  std::string name() const override { return "heuristic"; }

  void reset(const Simulator& sim, Clock::time_point) override {
    cache_ = std::make_shared<DistanceCache>(sim.grid_ptr());
    lights_ = TrafficLights(sim.grid());
    cap_ = cfg_.departure.cap(sim.grid());
    decided_.assign(static_cast<size_t>(sim.num_agents()), Action::Stop);
  }

  void begin_step(const Simulator& sim) override {
    const RailGrid& g = sim.grid();
    const int n = sim.num_agents();
    std::vector<int> wants(static_cast<size_t>(n), -1);
    std::vector<std::optional<Direction>> exit(static_cast<size_t>(n));
    std::fill(decided_.begin(), decided_.end(), Action::Stop);

    // On-grid agents: the reachable exit with the shortest remaining distance;
    // fall back to the other exit when the best next cell is occupied.
    for (int i = 0; i < n; ++i) {
      const AgentState& a = sim.agent(i);
      if (a.phase == AgentPhase::Done) {
        decided_[static_cast<size_t>(i)] = Action::DoNothing;
        continue;
      }
      if (a.phase != AgentPhase::OnGrid || a.malfunction_remaining > 0) continue;
      const auto dm = cache_->get(sim.specs()[static_cast<size_t>(i)].target);
      const int cell = g.index(a.cell);
      std::vector<std::pair<int, Direction>> options;
      for (Direction d : g.exits(cell, a.heading)) {
        const auto nb = g.neighbor(cell, d);
        if (!nb) continue;
        const auto dist = dm->at(*nb, d);
        if (dist) options.push_back({*dist, d});
      }
      std::stable_sort(options.begin(), options.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
      for (const auto& [dist, d] : options) {
        const int nb = *g.neighbor(cell, d);
        if (sim.occupant(nb) >= 0) continue;
        exit[static_cast<size_t>(i)] = d;
        wants[static_cast<size_t>(i)] = nb;
        break;
      }
    }

    // Off-grid agents: group leaders whose origin is free are gate candidates.
    std::vector<int> candidates;
    std::map<std::tuple<int, int, int>, int> leader;
    for (int i = 0; i < n; ++i) {
      const AgentState& a = sim.agent(i);
      if (a.phase != AgentPhase::OffGrid || a.malfunction_remaining > 0) continue;
      const AgentSpec& s = sim.specs()[static_cast<size_t>(i)];
      const auto key = std::make_tuple(g.index(s.origin), g.index(s.target), to_int(s.direction));
      if (leader.count(key)) continue;
      leader[key] = i;
      if (sim.occupant(g.index(s.origin)) < 0) candidates.push_back(i);
    }
    std::vector<uint8_t> may_depart(static_cast<size_t>(n), 0);
    if (!candidates.empty()) {
      if (!cfg_.gate) {
        for (int c : candidates) may_depart[static_cast<size_t>(c)] = 1;
      } else {
        const auto graph = build_conflict_graph(intents(sim), cfg_.conflict_window);
        const auto levels = assign_priorities(graph);
        std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
          return levels[static_cast<size_t>(a)] < levels[static_cast<size_t>(b)];
        });
        std::vector<GateCandidate> gc;
        const int remaining = std::max(1, sim.t_max() - sim.time());
        for (int c : candidates) {
          const AgentSpec& s = sim.specs()[static_cast<size_t>(c)];
          const int d = cache_->get(s.target)->raw(make_state(g.index(s.origin), s.direction));
          gc.push_back({c, GateFeatures{static_cast<double>(d + 1) / remaining,
                                        static_cast<double>(sim.num_on_grid()) / cap_,
                                        static_cast<double>(graph.degree(c))}});
        }
        for (int a : departure_gate(gc, cfg_.departure, sim.time(), sim.t_max(), sim.num_on_grid(), cap_))
          may_depart[static_cast<size_t>(a)] = 1;
      }
      // one departure per origin per step, in candidate order
      std::vector<uint8_t> origin_taken(static_cast<size_t>(g.num_cells()), 0);
      for (int c : candidates) {
        if (!may_depart[static_cast<size_t>(c)]) continue;
        const int o = g.index(sim.specs()[static_cast<size_t>(c)].origin);
        if (origin_taken[static_cast<size_t>(o)]) {
          may_depart[static_cast<size_t>(c)] = 0;
          continue;
        }
        origin_taken[static_cast<size_t>(o)] = 1;
        wants[static_cast<size_t>(c)] = o;
      }
    }

    // Two agents never target the same cell: lower id keeps it.
    std::vector<int> claim(static_cast<size_t>(g.num_cells()), -1);
    for (int i = 0; i < n; ++i) {
      const int w = wants[static_cast<size_t>(i)];
      if (w < 0) continue;
      if (claim[static_cast<size_t>(w)] >= 0) wants[static_cast<size_t>(i)] = -1;
      else claim[static_cast<size_t>(w)] = i;
    }
    std::vector<uint8_t> allow(static_cast<size_t>(n), 1);
    if (cfg_.traffic_lights) allow = lights_.control(sim, wants);
    for (int i = 0; i < n; ++i) {
      const AgentState& a = sim.agent(i);
      if (wants[static_cast<size_t>(i)] < 0 || !allow[static_cast<size_t>(i)]) continue;
      if (a.phase == AgentPhase::OffGrid) decided_[static_cast<size_t>(i)] = Action::MoveForward;
      else decided_[static_cast<size_t>(i)] = action_for_exit(a.heading, *exit[static_cast<size_t>(i)]);
    }
    for (int i = 0; i < n; ++i)
      if (sim.agent(i).malfunction_remaining > 0) decided_[static_cast<size_t>(i)] = Action::DoNothing;
  }

  Action decide(const Simulator&, int agent) override { return decided_[static_cast<size_t>(agent)]; }

  const TrafficLights& lights() const { return lights_; }

 private:
  /// Shortest-path routes from each live agent's state, timed from now.
  std::vector<std::vector<TimedCell>> intents(const Simulator& sim) const {
    const RailGrid& g = sim.grid();
    std::vector<std::vector<TimedCell>> out(static_cast<size_t>(sim.num_agents()));
    for (int i = 0; i < sim.num_agents(); ++i) {
      const AgentState& a = sim.agent(i);
      const AgentSpec& s = sim.specs()[static_cast<size_t>(i)];
      if (a.phase == AgentPhase::Done) continue;
      const StateId from = a.phase == AgentPhase::OnGrid ? make_state(g.index(a.cell), a.heading)
                                                         : make_state(g.index(s.origin), s.direction);
      const auto path = shortest_path(g, *cache_->get(s.target), from);
      const int t0 = sim.time() + (a.phase == AgentPhase::OnGrid ? 0 : 1) + a.malfunction_remaining;
      for (size_t k = 0; k < path.size(); ++k) out[static_cast<size_t>(i)].push_back({state_cell(path[k]), t0 + static_cast<int>(k)});
    }
    return out;
  }

  HeuristicConfig cfg_;
  std::shared_ptr<DistanceCache> cache_;
  TrafficLights lights_;
  int cap_ = 4;
  std::vector<Action> decided_;
};

}  // namespace railmapf
