#pragma once

// Deterministic episode engine: agent lifecycle, simultaneous movement,
// malfunctions, deadlock flags, reward accounting and replayable traces.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "railmapf/rail_core.hpp"
#include "railmapf/rng.hpp"

namespace railmapf {

enum class Action : uint8_t { DoNothing = 0, MoveLeft = 1, MoveForward = 2, MoveRight = 3, Stop = 4 };

inline std::string_view to_string(Action a) {
  switch (a) {
    case Action::DoNothing: return "DO_NOTHING";
    case Action::MoveLeft: return "MOVE_LEFT";
    case Action::MoveForward: return "MOVE_FORWARD";
    case Action::MoveRight: return "MOVE_RIGHT";
    case Action::Stop: return "STOP";
  }
  return "?";
}

inline Action action_from_int(int v) {
  if (v < 0 || v > 4) throw std::invalid_argument("action out of range: " + std::to_string(v));
  return static_cast<Action>(v);
}

inline bool is_move(Action a) {
  return a == Action::MoveLeft || a == Action::MoveForward || a == Action::MoveRight;
}

/// The action that turns heading `h` into exit heading `exit`, assuming the exit is valid.
inline Action action_for_exit(Direction heading, Direction exit) {
  if (exit == heading) return Action::MoveForward;
  if (exit == turn_left(heading)) return Action::MoveLeft;
  if (exit == turn_right(heading)) return Action::MoveRight;
  return Action::Stop;
}

struct AgentSpec {
  Cell origin;
  Direction direction = Direction::N;
  Cell target;
  bool operator==(const AgentSpec&) const = default;
};

enum class AgentPhase : uint8_t { OffGrid, OnGrid, Done };

struct AgentState {
  AgentPhase phase = AgentPhase::OffGrid;
  Cell cell{};                 // meaningful only when OnGrid
  Direction heading = Direction::N;
  int malfunction_remaining = 0;
  bool deadlocked = false;
  bool moving = false;         // DO_NOTHING keeps moving agents moving
  int reward = 0;
  int arrival_time = -1;       // timestep at which the agent reached its target
};

/// Forced malfunction applied at the start of step `t` (test and scenario hook).
struct ScriptedMalfunction {
  int t = 0;
  int agent = 0;
  int duration = 0;
  bool operator==(const ScriptedMalfunction&) const = default;
};

struct MalfunctionParams {
  double rate = 0.0;
  int min_duration = 20;
  int max_duration = 50;
  std::vector<ScriptedMalfunction> scripted;

  void validate() const {
    if (!(rate >= 0.0) || rate > 1.0) throw std::invalid_argument("malfunction rate must lie in [0, 1]");
    if (min_duration < 1 || min_duration > max_duration)
      throw std::invalid_argument("malfunction duration range must satisfy 1 <= min <= max");
  }
  bool operator==(const MalfunctionParams&) const = default;
};

struct MalfunctionEvent {
  int agent = 0;
  int duration = 0;
  bool operator==(const MalfunctionEvent&) const = default;
};

/// floor(8 * (w + h + n / c)) in exact integer arithmetic.
constexpr int64_t compute_t_max(int64_t width, int64_t height, int64_t n_agents, int64_t n_cities) {
  return (8 * (width + height) * n_cities + 8 * n_agents) / n_cities;
}

class InvalidAgentSpec : public std::invalid_argument {
 public:
  InvalidAgentSpec(int agent, const std::string& what)
      : std::invalid_argument("agent " + std::to_string(agent) + ": " + what), agent_(agent) {}
  int agent() const { return agent_; }

 private:
  int agent_;
};

class EpisodeTerminated : public std::logic_error {
 public:
  EpisodeTerminated() : std::logic_error("step called on a terminated episode") {}
};

struct PositionRecord {
  Cell cell;
  Direction heading;
  bool operator==(const PositionRecord&) const = default;
};

struct StepRecord {
  int t = 0;  // timestep before the step
  std::vector<Action> actions;
  std::vector<uint8_t> granted;
  std::vector<std::optional<PositionRecord>> positions;  // after the step
  std::vector<MalfunctionEvent> malfunctions;
  std::vector<int> deadlocks;  // newly flagged
  std::vector<int> arrived;
  bool operator==(const StepRecord&) const = default;
};

struct TraceHeader {
  int version = 1;
  uint64_t seed = 0;
  int test = -1;
  int env = -1;
  int n_cities = 0;
  int t_max = 0;
  RailGrid grid;
  std::vector<AgentSpec> agents;
  MalfunctionParams malfunction;
  bool operator==(const TraceHeader&) const = default;
};

struct EpisodeTrace {
  TraceHeader header;
  std::vector<StepRecord> steps;
  std::vector<int> final_rewards;
  double score = 0.0;
  int t_end = 0;
  bool operator==(const EpisodeTrace&) const = default;
};

/// s = 1 + (sum of per-agent rewards) / (n * t_max).
inline double episode_score(std::span<const int> rewards, int t_max) {
  if (rewards.empty() || t_max <= 0) return 0.0;
  const int64_t sum = std::accumulate(rewards.begin(), rewards.end(), int64_t{0});
  return 1.0 + static_cast<double>(sum) / (static_cast<double>(rewards.size()) * t_max);
}

inline double episode_score(const EpisodeTrace& trace, int t_max) { return episode_score(trace.final_rewards, t_max); }

struct StepOutcome {
  std::vector<int> rewards;
  std::vector<uint8_t> done;
  std::vector<uint8_t> granted;
  std::vector<MalfunctionEvent> malfunctions;
  std::vector<int> new_deadlocks;
  std::vector<int> arrived;
  bool terminated = false;
};

struct EpisodeSetup {
  std::shared_ptr<const RailGrid> grid;
  std::vector<AgentSpec> agents;
  MalfunctionParams malfunction;
  uint64_t seed = 0;
  int t_max = 0;
  int n_cities = 0;
  int test = -1;
  int env = -1;
};

/// Agents whose every exit leads into a cell held by the other member of a facing pair,
/// closed under "all exits lead into deadlocked agents' cells". Already-flagged agents
/// seed the closure, so the result never shrinks.
inline std::vector<uint8_t> detect_deadlocks(const RailGrid& grid, const std::vector<AgentState>& agents,
                                             const std::vector<int>& occupancy) {
  const size_t n = agents.size();
  std::vector<uint8_t> flagged(n, 0);
  auto exit_cells = [&](const AgentState& a) {
    std::vector<int> out;
    const int c = grid.index(a.cell);
    for (Direction ex : grid.exits(c, a.heading)) {
      const auto nb = grid.neighbor(c, ex);
      out.push_back(nb ? *nb : -1);
    }
    return out;
  };
  for (size_t i = 0; i < n; ++i)
    if (agents[i].phase == AgentPhase::OnGrid && agents[i].deadlocked) flagged[i] = 1;
  for (size_t i = 0; i < n; ++i) {
    const AgentState& a = agents[i];
    if (a.phase != AgentPhase::OnGrid) continue;
    const auto exits = exit_cells(a);
    if (exits.empty()) continue;
    const int other = exits[0] >= 0 ? occupancy[static_cast<size_t>(exits[0])] : -1;
    if (other < 0) continue;
    if (!std::all_of(exits.begin(), exits.end(),
                     [&](int c) { return c >= 0 && occupancy[static_cast<size_t>(c)] == other; }))
      continue;
    const auto back = exit_cells(agents[static_cast<size_t>(other)]);
    const int mine = grid.index(a.cell);
    if (!back.empty() && std::all_of(back.begin(), back.end(), [&](int c) { return c == mine; })) {
      flagged[i] = 1;
      flagged[static_cast<size_t>(other)] = 1;
    }
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (size_t i = 0; i < n; ++i) {
      const AgentState& a = agents[i];
      if (flagged[i] || a.phase != AgentPhase::OnGrid) continue;
      const auto exits = exit_cells(a);
      if (exits.empty()) continue;
      const bool blocked = std::all_of(exits.begin(), exits.end(), [&](int c) {
        if (c < 0) return false;
        const int o = occupancy[static_cast<size_t>(c)];
        return o >= 0 && flagged[static_cast<size_t>(o)];
      });
      if (blocked) {
        flagged[i] = 1;
        changed = true;
      }
    }
  }
  return flagged;
}

class Simulator {
 public:
  /// Validates the agent specs and places every agent off the grid at t = 0.
  explicit Simulator(EpisodeSetup setup) : setup_(std::move(setup)), rng_(setup_.seed) {
    if (!setup_.grid) throw std::invalid_argument("simulator needs a grid");
    setup_.malfunction.validate();
    const RailGrid& grid = *setup_.grid;
    const auto classes = classify_cells(grid);
    for (size_t i = 0; i < setup_.agents.size(); ++i) {
      const AgentSpec& s = setup_.agents[i];
      const int id = static_cast<int>(i);
      if (!grid.in_bounds(s.origin) || !grid.in_bounds(s.target)) throw InvalidAgentSpec(id, "cell out of bounds");
      if (s.origin == s.target) throw InvalidAgentSpec(id, "origin equals target");
      for (Cell c : {s.origin, s.target}) {
        const CellClass k = classes[static_cast<size_t>(grid.index(c))];
        if (k == CellClass::NonRail) throw InvalidAgentSpec(id, "origin/target is not a rail cell");
        if (k == CellClass::Decision) throw InvalidAgentSpec(id, "origin/target is a decision cell");
      }
      if (grid.exits(grid.index(s.origin), s.direction).empty())
        throw InvalidAgentSpec(id, "initial direction has no exit at the origin");
      if (!reachable(grid, s.origin, s.direction, s.target)) throw InvalidAgentSpec(id, "target unreachable");
    }
    if (setup_.t_max <= 0) {
      const int c = std::max(setup_.n_cities, 1);
      setup_.t_max = static_cast<int>(
          compute_t_max(grid.width(), grid.height(), static_cast<int64_t>(setup_.agents.size()), c));
    }
    agents_.assign(setup_.agents.size(), AgentState{});
    for (size_t i = 0; i < agents_.size(); ++i) agents_[i].heading = setup_.agents[i].direction;
    occupancy_.assign(static_cast<size_t>(grid.num_cells()), -1);
    trace_.header = TraceHeader{1,
                                setup_.seed,
                                setup_.test,
                                setup_.env,
                                setup_.n_cities,
                                setup_.t_max,
                                grid,
                                setup_.agents,
                                setup_.malfunction};
  }

  const RailGrid& grid() const { return *setup_.grid; }
  std::shared_ptr<const RailGrid> grid_ptr() const { return setup_.grid; }
  const EpisodeSetup& setup() const { return setup_; }
  const std::vector<AgentSpec>& specs() const { return setup_.agents; }
  const std::vector<AgentState>& agents() const { return agents_; }
  const AgentState& agent(int i) const { return agents_[static_cast<size_t>(i)]; }
  int num_agents() const { return static_cast<int>(agents_.size()); }
  int time() const { return t_; }
  int t_max() const { return setup_.t_max; }
  bool terminated() const { return terminated_; }
  int occupant(int cell) const { return occupancy_[static_cast<size_t>(cell)]; }
  const std::vector<int>& occupancy() const { return occupancy_; }
  const EpisodeTrace& trace() const { return trace_; }
  const StepOutcome& last_outcome() const { return last_; }
  int num_done() const {
    return static_cast<int>(std::count_if(agents_.begin(), agents_.end(),
                                          [](const AgentState& a) { return a.phase == AgentPhase::Done; }));
  }
  int num_on_grid() const {
    return static_cast<int>(std::count_if(agents_.begin(), agents_.end(),
                                          [](const AgentState& a) { return a.phase == AgentPhase::OnGrid; }));
  }

  /// Copies used for look-ahead disable recording and may change malfunction
  /// parameters or extend the horizon; the episode record is unaffected.
  void set_recording(bool on) { recording_ = on; }
  void set_malfunction_params(MalfunctionParams p) {
    p.validate();
    setup_.malfunction = std::move(p);
  }
  void set_t_max(int t_max) {
    setup_.t_max = t_max;
    if (t_ < t_max && num_done() < num_agents()) terminated_ = false;
  }

  /// Current state of agent i as (cell, heading) if on the grid.
  std::optional<PositionRecord> position(int i) const {
    const AgentState& a = agents_[static_cast<size_t>(i)];
    if (a.phase != AgentPhase::OnGrid) return std::nullopt;
    return PositionRecord{a.cell, a.heading};
  }

  /// Exit heading the action would take for agent i, or nullopt if it would not move.
  std::optional<Direction> intended_exit(int i, Action action) const {
    const AgentState& a = agents_[static_cast<size_t>(i)];
    if (a.phase != AgentPhase::OnGrid) return std::nullopt;
    const DirectionSet exits = grid().exits(grid().index(a.cell), a.heading);
    auto forward = [&]() -> std::optional<Direction> {
      if (exits.contains(a.heading)) return a.heading;
      if (exits.size() == 1) return *exits.begin();
      return std::nullopt;
    };
    switch (action) {
      case Action::MoveForward: return forward();
      case Action::MoveLeft:
        if (exits.contains(turn_left(a.heading))) return turn_left(a.heading);
        return a.moving ? forward() : std::nullopt;
      case Action::MoveRight:
        if (exits.contains(turn_right(a.heading))) return turn_right(a.heading);
        return a.moving ? forward() : std::nullopt;
      case Action::DoNothing: return a.moving ? forward() : std::nullopt;
      case Action::Stop: return std::nullopt;
    }
    return std::nullopt;
  }

  StepOutcome step(std::span<const Action> actions) {
    if (terminated_) throw EpisodeTerminated();
    const RailGrid& grid = *setup_.grid;
    const size_t n = agents_.size();
    StepOutcome out;
    out.rewards.assign(n, 0);
    out.granted.assign(n, 0);
    auto action_of = [&](size_t i) { return i < actions.size() ? actions[i] : Action::DoNothing; };

    // 1. malfunctions
    for (size_t i = 0; i < n; ++i) {
      AgentState& a = agents_[i];
      if (a.phase == AgentPhase::Done || a.malfunction_remaining > 0) continue;
      const double u = uniform01(rng_);
      if (u < setup_.malfunction.rate) {
        const int d = static_cast<int>(
            uniform_int(rng_, setup_.malfunction.min_duration, setup_.malfunction.max_duration));
        a.malfunction_remaining = d;
        out.malfunctions.push_back({static_cast<int>(i), d});
      }
    }
    for (const ScriptedMalfunction& m : setup_.malfunction.scripted) {
      if (m.t != t_ || m.agent < 0 || static_cast<size_t>(m.agent) >= n) continue;
      AgentState& a = agents_[static_cast<size_t>(m.agent)];
      if (a.phase == AgentPhase::Done || a.malfunction_remaining > 0 || m.duration <= 0) continue;
      a.malfunction_remaining = m.duration;
      out.malfunctions.push_back({m.agent, m.duration});
    }
    std::vector<uint8_t> frozen(n, 0);
    for (size_t i = 0; i < n; ++i) frozen[i] = agents_[i].malfunction_remaining > 0;

    // 2. intents
    std::vector<int> target_cell(n, -1);
    std::vector<Direction> new_heading(n, Direction::N);
    for (size_t i = 0; i < n; ++i) {
      AgentState& a = agents_[i];
      const Action act = action_of(i);
      if (a.phase == AgentPhase::Done || frozen[i]) continue;
      if (a.phase == AgentPhase::OffGrid) {
        if (is_move(act)) {
          target_cell[i] = grid.index(setup_.agents[i].origin);
          new_heading[i] = setup_.agents[i].direction;
        }
        continue;
      }
      const auto ex = intended_exit(static_cast<int>(i), act);
      if (is_move(act) && ex) a.moving = true;
      if (act == Action::Stop) a.moving = false;
      if (ex) {
        const auto nb = grid.neighbor(grid.index(a.cell), *ex);
        if (nb) {
          target_cell[i] = *nb;
          new_heading[i] = *ex;
        }
      }
    }

    // 3. same-cell contention: lowest id claims the cell
    std::vector<int> claimant(static_cast<size_t>(grid.num_cells()), -1);
    for (size_t i = 0; i < n; ++i) {
      if (target_cell[i] < 0) continue;
      int& c = claimant[static_cast<size_t>(target_cell[i])];
      if (c < 0) c = static_cast<int>(i);
      else target_cell[i] = -1;
    }

    // 4. chain resolution: grant iff the target is empty or vacated by a granted move;
    //    two-cycles (swaps) are denied, longer rotations granted.
    enum : uint8_t { kUnknown, kVisiting, kGranted, kDenied };
    std::vector<uint8_t> status(n, kUnknown);
    for (size_t start = 0; start < n; ++start) {
      if (target_cell[start] < 0 || status[start] != kUnknown) continue;
      std::vector<size_t> chain;
      size_t cur = start;
      uint8_t verdict = kDenied;
      while (true) {
        if (status[cur] == kGranted || status[cur] == kDenied) {
          verdict = status[cur];
          break;
        }
        if (status[cur] == kVisiting) {
          const auto pos = std::find(chain.begin(), chain.end(), cur);
          const size_t cycle_len = static_cast<size_t>(chain.end() - pos);
          const uint8_t cyc = cycle_len >= 3 ? kGranted : kDenied;
          for (auto it = pos; it != chain.end(); ++it) status[*it] = cyc;
          chain.erase(pos, chain.end());
          verdict = cyc;
          break;
        }
        status[cur] = kVisiting;
        chain.push_back(cur);
        const int occ = occupancy_[static_cast<size_t>(target_cell[cur])];
        if (occ < 0) {
          verdict = kGranted;
          break;
        }
        if (target_cell[static_cast<size_t>(occ)] < 0) {
          verdict = kDenied;
          break;
        }
        cur = static_cast<size_t>(occ);
      }
      for (size_t c : chain)
        if (status[c] == kVisiting) status[c] = verdict;
    }

    // 5. apply
    const int t_next = t_ + 1;
    for (size_t i = 0; i < n; ++i)
      if (status[i] == kGranted && agents_[i].phase == AgentPhase::OnGrid)
        occupancy_[static_cast<size_t>(grid.index(agents_[i].cell))] = -1;
    for (size_t i = 0; i < n; ++i) {
      AgentState& a = agents_[i];
      if (a.phase != AgentPhase::Done) out.rewards[i] = -1;
      if (status[i] != kGranted) continue;
      out.granted[i] = 1;
      if (a.phase == AgentPhase::OffGrid) a.moving = true;
      a.phase = AgentPhase::OnGrid;
      a.cell = grid.cell(target_cell[i]);
      a.heading = new_heading[i];
      if (a.cell == setup_.agents[i].target) {
        a.phase = AgentPhase::Done;
        a.moving = false;
        a.arrival_time = t_next;
        out.arrived.push_back(static_cast<int>(i));
      } else {
        occupancy_[static_cast<size_t>(target_cell[i])] = static_cast<int>(i);
      }
    }
    for (size_t i = 0; i < n; ++i)
      if (frozen[i]) --agents_[i].malfunction_remaining;

    const bool all_done = num_done() == static_cast<int>(n);
    if (all_done)
      for (size_t i = 0; i < n; ++i) out.rewards[i] += 1;
    for (size_t i = 0; i < n; ++i) agents_[i].reward += out.rewards[i];

    // 6. deadlocks
    const auto flagged = detect_deadlocks(grid, agents_, occupancy_);
    for (size_t i = 0; i < n; ++i)
      if (flagged[i] && !agents_[i].deadlocked) {
        agents_[i].deadlocked = true;
        out.new_deadlocks.push_back(static_cast<int>(i));
      }

    t_ = t_next;
    terminated_ = all_done || t_ >= setup_.t_max;
    out.terminated = terminated_;
    out.done.resize(n);
    for (size_t i = 0; i < n; ++i) out.done[i] = agents_[i].phase == AgentPhase::Done;

    if (recording_) {
      StepRecord rec;
      rec.t = t_ - 1;
      rec.actions.resize(n);
      for (size_t i = 0; i < n; ++i) rec.actions[i] = action_of(i);
      rec.granted = out.granted;
      rec.positions.resize(n);
      for (size_t i = 0; i < n; ++i) rec.positions[i] = position(static_cast<int>(i));
      rec.malfunctions = out.malfunctions;
      rec.deadlocks = out.new_deadlocks;
      rec.arrived = out.arrived;
      trace_.steps.push_back(std::move(rec));
      trace_.t_end = t_;
      if (terminated_) {
        trace_.final_rewards.resize(n);
        for (size_t i = 0; i < n; ++i) trace_.final_rewards[i] = agents_[i].reward;
        trace_.score = episode_score(trace_.final_rewards, setup_.t_max);
      }
    }
    last_ = out;
    return out;
  }

  StepOutcome step(std::initializer_list<Action> actions) {
    return step(std::span<const Action>(actions.begin(), actions.size()));
  }

  /// Runs DO_NOTHING until termination and returns the finished trace.
  const EpisodeTrace& finish_idle() {
    const std::vector<Action> idle(agents_.size(), Action::DoNothing);
    while (!terminated_) step(idle);
    return trace_;
  }

  /// Copy of the live state without the trace, not recording, with no further
  /// malfunctions. Running malfunctions keep counting down.
  Simulator projection() const {
    Simulator s(*this, Bare{});
    s.setup_.malfunction.rate = 0.0;
    s.setup_.malfunction.scripted.clear();
    s.recording_ = false;
    return s;
  }

 private:
  struct Bare {};
  Simulator(const Simulator& o, Bare)
      : setup_(o.setup_), rng_(o.rng_), agents_(o.agents_), occupancy_(o.occupancy_), t_(o.t_),
        terminated_(o.terminated_), recording_(o.recording_) {}

  EpisodeSetup setup_;
  Rng rng_;
  std::vector<AgentState> agents_;
  std::vector<int> occupancy_;
  int t_ = 0;
  bool terminated_ = false;
  bool recording_ = true;
  EpisodeTrace trace_;
  StepOutcome last_;
};

inline Simulator reset(std::shared_ptr<const RailGrid> grid, std::vector<AgentSpec> agents, MalfunctionParams malf,
                       uint64_t seed, int t_max = 0, int n_cities = 0) {
  EpisodeSetup s;
  s.grid = std::move(grid);
  s.agents = std::move(agents);
  s.malfunction = std::move(malf);
  s.seed = seed;
  s.t_max = t_max;
  s.n_cities = n_cities;
  return Simulator(std::move(s));
}

// ---------------------------------------------------------------------------
// Trace serialisation: JSON lines. Line 1 is the header, then one record per
// step, then a final record holding the per-agent rewards and the score.

inline nlohmann::json agent_spec_to_json(const AgentSpec& s) {
  return {{"origin", cell_to_json(s.origin)},
          {"direction", std::string(1, direction_char(s.direction))},
          {"target", cell_to_json(s.target)}};
}

inline AgentSpec agent_spec_from_json(const nlohmann::json& j) {
  return {cell_from_json(j.at("origin")), parse_direction(j.at("direction").get<std::string>()),
          cell_from_json(j.at("target"))};
}

inline nlohmann::json malfunction_to_json(const MalfunctionParams& m) {
  nlohmann::json scripted = nlohmann::json::array();
  for (const auto& s : m.scripted) scripted.push_back({s.t, s.agent, s.duration});
  return {{"rate", m.rate}, {"min_duration", m.min_duration}, {"max_duration", m.max_duration}, {"scripted", scripted}};
}

inline MalfunctionParams malfunction_from_json(const nlohmann::json& j) {
  MalfunctionParams m;
  m.rate = j.value("rate", 0.0);
  m.min_duration = j.value("min_duration", 20);
  m.max_duration = j.value("max_duration", 50);
  if (j.contains("scripted"))
    for (const auto& s : j.at("scripted")) m.scripted.push_back({s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()});
  return m;
}

inline nlohmann::json header_to_json(const TraceHeader& h) {
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& a : h.agents) agents.push_back(agent_spec_to_json(a));
  return {{"type", "header"},        {"version", h.version}, {"seed", h.seed},
          {"test", h.test},          {"env", h.env},         {"n_cities", h.n_cities},
          {"t_max", h.t_max},        {"grid", grid_to_json(h.grid)},
          {"agents", agents},        {"malfunction", malfunction_to_json(h.malfunction)}};
}

inline TraceHeader header_from_json(const nlohmann::json& j) {
  TraceHeader h;
  h.version = j.at("version").get<int>();
  if (h.version != 1) throw std::runtime_error("unsupported trace version " + std::to_string(h.version));
  h.seed = j.at("seed").get<uint64_t>();
  h.test = j.value("test", -1);
  h.env = j.value("env", -1);
  h.n_cities = j.value("n_cities", 0);
  h.t_max = j.at("t_max").get<int>();
  h.grid = grid_from_json(j.at("grid"));
  for (const auto& a : j.at("agents")) h.agents.push_back(agent_spec_from_json(a));
  h.malfunction = malfunction_from_json(j.at("malfunction"));
  return h;
}

inline nlohmann::json step_to_json(const StepRecord& r) {
  nlohmann::json actions = nlohmann::json::array(), positions = nlohmann::json::array(),
                 malf = nlohmann::json::array();
  for (Action a : r.actions) actions.push_back(static_cast<int>(a));
  for (const auto& p : r.positions) {
    if (p) positions.push_back({p->cell.row, p->cell.col, std::string(1, direction_char(p->heading))});
    else positions.push_back(nullptr);
  }
  for (const auto& m : r.malfunctions) malf.push_back({m.agent, m.duration});
  return {{"t", r.t},           {"actions", actions},        {"granted", r.granted}, {"positions", positions},
          {"malfunctions", malf}, {"deadlocks", r.deadlocks}, {"arrived", r.arrived}};
}

inline StepRecord step_from_json(const nlohmann::json& j) {
  StepRecord r;
  r.t = j.at("t").get<int>();
  for (const auto& a : j.at("actions")) r.actions.push_back(action_from_int(a.get<int>()));
  r.granted = j.at("granted").get<std::vector<uint8_t>>();
  for (const auto& p : j.at("positions")) {
    if (p.is_null()) r.positions.emplace_back(std::nullopt);
    else r.positions.emplace_back(PositionRecord{{p.at(0).get<int>(), p.at(1).get<int>()},
                                                 parse_direction(p.at(2).get<std::string>())});
  }
  for (const auto& m : j.at("malfunctions")) r.malfunctions.push_back({m.at(0).get<int>(), m.at(1).get<int>()});
  r.deadlocks = j.at("deadlocks").get<std::vector<int>>();
  r.arrived = j.value("arrived", std::vector<int>{});
  return r;
}

inline std::string trace_to_jsonl(const EpisodeTrace& trace) {
  std::string out = header_to_json(trace.header).dump() + "\n";
  for (const auto& s : trace.steps) out += step_to_json(s).dump() + "\n";
  nlohmann::json fin = {{"type", "final"}, {"rewards", trace.final_rewards}, {"score", trace.score}, {"t_end", trace.t_end}};
  out += fin.dump() + "\n";
  return out;
}

inline EpisodeTrace trace_from_jsonl(std::istream& in) {
  EpisodeTrace trace;
  std::string line;
  bool have_header = false, have_final = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("trace line " + std::to_string(line_no) + ": " + e.what());
    }
    const std::string type = j.value("type", "step");
    if (type == "header") {
      trace.header = header_from_json(j);
      have_header = true;
    } else if (type == "final") {
      trace.final_rewards = j.at("rewards").get<std::vector<int>>();
      trace.score = j.at("score").get<double>();
      trace.t_end = j.at("t_end").get<int>();
      have_final = true;
    } else {
      if (!have_header) throw std::runtime_error("trace: step record before header");
      trace.steps.push_back(step_from_json(j));
    }
  }
  if (!have_header) throw std::runtime_error("trace: missing header");
  if (!have_final) throw std::runtime_error("trace: missing final record");
  return trace;
}

inline void write_trace(const EpisodeTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write trace " + path);
  out << trace_to_jsonl(trace);
}

inline EpisodeTrace read_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace " + path);
  return trace_from_jsonl(in);
}

/// Re-runs the recorded actions from the header's seed.
inline EpisodeTrace replay(const EpisodeTrace& trace) {
  EpisodeSetup s;
  s.grid = std::make_shared<const RailGrid>(trace.header.grid);
  s.agents = trace.header.agents;
  s.malfunction = trace.header.malfunction;
  s.seed = trace.header.seed;
  s.t_max = trace.header.t_max;
  s.n_cities = trace.header.n_cities;
  s.test = trace.header.test;
  s.env = trace.header.env;
  Simulator sim(std::move(s));
  for (const StepRecord& r : trace.steps) {
    if (sim.terminated()) break;
    sim.step(r.actions);
  }
  return sim.trace();
}

}  // namespace railmapf
