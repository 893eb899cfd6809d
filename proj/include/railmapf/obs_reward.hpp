#pragma once

// Observation builders, shaped rewards and the decision-point mask.

#include <array>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "json.hpp"

#include "railmapf/controller.hpp"
#include "railmapf/rail_graph.hpp"
#include "railmapf/rng.hpp"

namespace railmapf {

inline constexpr double kCountSentinel = -1.0;
inline constexpr double kDistanceSentinel = -2.0;

// ---------------------------------------------------------------------------
// Priority handle

/// One uniform [0, 1) number per agent, fixed by the episode seed.
inline std::vector<double> priority_handles(uint64_t seed, int n) {
  Rng rng(mix_seed(seed, 0x9e1f'0bd1ULL));
  std::vector<double> h(static_cast<size_t>(n));
  for (double& x : h) x = uniform01(rng);
  return h;
}

// ---------------------------------------------------------------------------
// Tree observation

enum class FeatureSet : uint8_t { Minimal4 = 4, Standard7 = 7, Rich11 = 11 };

inline int feature_count(FeatureSet f) { return static_cast<int>(f); }

inline FeatureSet feature_set_from_string(const std::string& s) {
  if (s == "minimal-4") return FeatureSet::Minimal4;
  if (s == "standard-7") return FeatureSet::Standard7;
  if (s == "rich-11") return FeatureSet::Rich11;
  throw std::invalid_argument("unknown feature set: " + s);
}

/// Per-edge features; each preset is a prefix of this list.
enum TreeFeature : int {
  kEdgeLength = 0,
  kFarDistance,       // distance to target from the far node
  kTargetOnBranch,
  kOtherAgents,
  kOpposingDistance,  // moves to the nearest agent heading against the branch
  kDeadlockOnBranch,
  kMinHandle,
  kMaxHandle,
  kSameDirection,
  kMalfunctioning,
  kFirstCellOccupied,
};

inline bool is_distance_feature(int f) { return f == kEdgeLength || f == kFarDistance || f == kOpposingDistance; }

struct TreeObservation {
  int depth = 1;
  FeatureSet features = FeatureSet::Standard7;
  std::vector<double> values;  // edges in breadth-first slot order, two slots per node

  static int num_edges(int depth) { return (1 << (depth + 1)) - 2; }
  static size_t size_for(int depth, FeatureSet f) {
    return static_cast<size_t>(num_edges(depth)) * static_cast<size_t>(feature_count(f));
  }
  double at(int edge, int feature) const {
    return values[static_cast<size_t>(edge * feature_count(features) + feature)];
  }
  /// Present iff the edge slot holds a real branch.
  bool present(int edge) const { return at(edge, kEdgeLength) != kDistanceSentinel; }
};

namespace detail {

/// Exits of a state in left, forward, right order.
inline std::vector<Direction> ordered_exits(const RailGrid& g, StateId s) {
  const Direction h = state_heading(s);
  const DirectionSet ex = g.exits(state_cell(s), h);
  std::vector<Direction> out;
  for (Direction d : {turn_left(h), h, turn_right(h)})
    if (ex.contains(d) && g.neighbor(state_cell(s), d)) out.push_back(d);
  return out;
}

struct Branch {
  std::vector<StateId> states;  // cells entered along the branch, far node last
};

inline Branch follow(const RailGrid& g, StateId from, Direction exit, int target_cell) {
  Branch b;
  StateId s = make_state(*g.neighbor(state_cell(from), exit), exit);
  const int limit = g.num_cells() * 4;
  while (true) {
    b.states.push_back(s);
    if (state_cell(s) == target_cell || static_cast<int>(b.states.size()) >= limit) break;
    const auto ex = ordered_exits(g, s);
    if (ex.size() != 1) break;
    s = make_state(*g.neighbor(state_cell(s), ex[0]), ex[0]);
  }
  return b;
}

}  // namespace detail

/// Root state for observations: the agent's state, or its origin while off the grid.
inline std::optional<StateId> observation_root(const Simulator& sim, int agent) {
  const AgentState& a = sim.agent(agent);
  const RailGrid& g = sim.grid();
  if (a.phase == AgentPhase::OnGrid) return make_state(g.index(a.cell), a.heading);
  if (a.phase == AgentPhase::OffGrid) {
    const AgentSpec& s = sim.specs()[static_cast<size_t>(agent)];
    return make_state(g.index(s.origin), s.direction);
  }
  return std::nullopt;
}

inline TreeObservation tree_observe(const Simulator& sim, int agent, int depth, FeatureSet features,
                                    const DistanceMap& dm, const std::vector<double>& handles = {}) {
  if (depth < 1 || depth > 3) throw std::invalid_argument("tree depth must lie in [1, 3]");
  const RailGrid& g = sim.grid();
  const int F = feature_count(features);
  TreeObservation obs;
  obs.depth = depth;
  obs.features = features;
  obs.values.assign(TreeObservation::size_for(depth, features), 0.0);
  auto pad = [&](int edge) {
    for (int f = 0; f < F; ++f)
      obs.values[static_cast<size_t>(edge * F + f)] = is_distance_feature(f) ? kDistanceSentinel : kCountSentinel;
  };
  for (int e = 0; e < TreeObservation::num_edges(depth); ++e) pad(e);
  const auto root = observation_root(sim, agent);
  if (!root) return obs;
  const int target = g.index(sim.specs()[static_cast<size_t>(agent)].target);

  // frontier[k]: node state feeding the two child slots 2k, 2k+1 of the next level
  std::vector<std::optional<StateId>> frontier{root};
  int level_base = 0;
  for (int level = 1; level <= depth; ++level) {
    std::vector<std::optional<StateId>> next(frontier.size() * 2);
    for (size_t k = 0; k < frontier.size(); ++k) {
      if (!frontier[k]) continue;
      const StateId node = *frontier[k];
      if (level > 1 && state_cell(node) == target) continue;
      const auto exits = detail::ordered_exits(g, node);
      for (size_t slot = 0; slot < exits.size() && slot < 2; ++slot) {
        const int edge = level_base + static_cast<int>(2 * k + slot);
        const detail::Branch b = detail::follow(g, node, exits[slot], target);
        std::array<double, 11> v{};
        v[kEdgeLength] = static_cast<double>(b.states.size());
        const StateId far = b.states.back();
        v[kFarDistance] = dm.reachable(far) ? dm.raw(far) : kDistanceSentinel;
        int others = 0, same = 0, malf = 0;
        bool target_seen = false, deadlock = false;
        double opposing = kDistanceSentinel, lo = kCountSentinel, hi = kCountSentinel;
        for (size_t i = 0; i < b.states.size(); ++i) {
          const int cell = state_cell(b.states[i]);
          if (cell == target) target_seen = true;
          const int occ = sim.occupant(cell);
          if (occ < 0 || occ == agent) continue;
          const AgentState& o = sim.agent(occ);
          ++others;
          if (o.heading == state_heading(b.states[i])) ++same;
          if (o.heading == opposite(state_heading(b.states[i])) && opposing == kDistanceSentinel)
            opposing = static_cast<double>(i + 1);
          if (o.deadlocked) deadlock = true;
          if (o.malfunction_remaining > 0) ++malf;
          if (static_cast<size_t>(occ) < handles.size()) {
            const double h = handles[static_cast<size_t>(occ)];
            lo = lo < 0 ? h : std::min(lo, h);
            hi = hi < 0 ? h : std::max(hi, h);
          }
        }
        v[kTargetOnBranch] = target_seen ? 1 : 0;
        v[kOtherAgents] = others;
        v[kOpposingDistance] = opposing;
        v[kDeadlockOnBranch] = deadlock ? 1 : 0;
        v[kMinHandle] = lo;
        v[kMaxHandle] = hi;
        v[kSameDirection] = same;
        v[kMalfunctioning] = malf;
        const int first = sim.occupant(state_cell(b.states.front()));
        v[kFirstCellOccupied] = first >= 0 && first != agent ? 1 : 0;
        for (int f = 0; f < F; ++f) obs.values[static_cast<size_t>(edge * F + f)] = v[static_cast<size_t>(f)];
        next[2 * k + slot] = far;
      }
    }
    level_base += 1 << level;
    frontier = std::move(next);
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Junction observation: 3 choices (left, forward, right) x 9 features.

enum JunctionFeature : int {
  kSolutionExists = 0,
  kPathLength,
  kBlockingInNextJunction,
  kBlockingOnPath,
  kCrashedOnPath,
  kBlockingOnPathJunctions,
  kQueuingAtNextJunction,
  kDistanceToNextJunction,
  kStoppingPointOccupied,
};

inline constexpr int kJunctionChoices = 3;
inline constexpr int kJunctionFeatures = 9;

struct JunctionObservation {
  std::array<double, kJunctionChoices * kJunctionFeatures> values{};
  double at(int choice, int feature) const { return values[static_cast<size_t>(choice * kJunctionFeatures + feature)]; }
  static constexpr size_t size() { return kJunctionChoices * kJunctionFeatures; }
};

/// Cluster lookup shared by junction observations of one snapshot.
struct ClusterIndex {
  std::vector<Cluster> clusters;
  std::vector<int> label;
  explicit ClusterIndex(const RailGrid& g) : clusters(find_clusters(g)), label(cluster_labels(g, clusters)) {}
};

inline JunctionObservation junction_observe(const Simulator& sim, int agent, const DistanceMap& dm,
                                            const ClusterIndex& ci) {
  const RailGrid& g = sim.grid();
  const auto root = observation_root(sim, agent);
  if (!root) throw std::invalid_argument("junction observation needs an active agent");
  const auto cls = classify_cells(g)[static_cast<size_t>(state_cell(*root))];
  if (cls != CellClass::Stopping && cls != CellClass::Decision)
    throw std::invalid_argument("junction observation queried at a masked cell");
  JunctionObservation obs;
  auto sentinel = [&](int choice, bool exists_flag) {
    for (int f = 0; f < kJunctionFeatures; ++f)
      obs.values[static_cast<size_t>(choice * kJunctionFeatures + f)] =
          (f == kPathLength || f == kDistanceToNextJunction) ? kDistanceSentinel : kCountSentinel;
    if (exists_flag) obs.values[static_cast<size_t>(choice * kJunctionFeatures)] = 0.0;
  };
  const Direction h = state_heading(*root);
  const DirectionSet exits = g.exits(state_cell(*root), h);
  const std::array<Direction, 3> dirs{turn_left(h), h, turn_right(h)};
  for (int c = 0; c < kJunctionChoices; ++c) {
    const Direction d = dirs[static_cast<size_t>(c)];
    const auto nb = exits.contains(d) ? g.neighbor(state_cell(*root), d) : std::nullopt;
    if (!nb) {
      sentinel(c, false);
      continue;
    }
    const StateId s = make_state(*nb, d);
    if (!dm.reachable(s)) {
      sentinel(c, true);
      continue;
    }
    const auto path = shortest_path(g, dm, s);
    double* v = &obs.values[static_cast<size_t>(c * kJunctionFeatures)];
    v[kSolutionExists] = 1;
    v[kPathLength] = dm.raw(s);
    int first_member = -1;
    for (size_t k = 0; k < path.size(); ++k)
      if (ci.label[static_cast<size_t>(state_cell(path[k]))] >= 0) {
        first_member = static_cast<int>(k);
        break;
      }
    int on_path = 0, crashed = 0, on_junctions = 0;
    for (StateId p : path) {
      const int occ = sim.occupant(state_cell(p));
      if (occ < 0 || occ == agent) continue;
      ++on_path;
      if (sim.agent(occ).deadlocked) ++crashed;
      if (is_junction_cell(g.at(state_cell(p)))) ++on_junctions;
    }
    v[kBlockingOnPath] = on_path;
    v[kCrashedOnPath] = crashed;
    v[kBlockingOnPathJunctions] = on_junctions;
    if (first_member < 0) {
      v[kBlockingInNextJunction] = 0;
      v[kQueuingAtNextJunction] = 0;
      v[kDistanceToNextJunction] = kDistanceSentinel;
      v[kStoppingPointOccupied] = kCountSentinel;
      continue;
    }
    const int k = ci.label[static_cast<size_t>(state_cell(path[static_cast<size_t>(first_member)]))];
    const Cluster& cl = ci.clusters[static_cast<size_t>(k)];
    int inside = 0, queuing = 0;
    for (const Cell& m : cl.members) {
      const int occ = sim.occupant(g.index(m));
      if (occ >= 0 && occ != agent) ++inside;
    }
    for (const Cell& e : cl.entries) {
      const int occ = sim.occupant(g.index(e));
      if (occ < 0 || occ == agent) continue;
      const AgentState& o = sim.agent(occ);
      for (Direction x : g.exits(g.index(e), o.heading)) {
        const auto n2 = g.neighbor(g.index(e), x);
        if (n2 && ci.label[static_cast<size_t>(*n2)] == k) {
          ++queuing;
          break;
        }
      }
    }
    v[kBlockingInNextJunction] = inside;
    v[kQueuingAtNextJunction] = queuing;
    v[kDistanceToNextJunction] = first_member;
    if (first_member == 0) {
      v[kStoppingPointOccupied] = kCountSentinel;
    } else {
      const int occ = sim.occupant(state_cell(path[static_cast<size_t>(first_member - 1)]));
      v[kStoppingPointOccupied] = occ >= 0 && occ != agent ? 1 : 0;
    }
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Shaped reward

struct RewardConfig {
  double progress = 0.01;
  double deadlock_penalty = 5.0;
  double finish_bonus = 10.0;
  double step_penalty = 0.0;  // per step while not finished

  static RewardConfig progress_preset() { return {}; }
  /// Finish-only positive reward with graded penalties. The magnitudes are
  /// placeholders to be tuned by the caller.
  static RewardConfig finish_preset(double finish = 1.0, double deadlock = 1.0, double step = 0.01) {
    return {0.0, deadlock, finish, step};
  }
};

struct RewardSample {
  std::optional<int> distance;  // to target; 0 once finished
  bool deadlocked = false;
  bool finished = false;
};

/// Off the grid the distance counts the entry step.
inline RewardSample reward_sample(const Simulator& sim, int agent, const DistanceMap& dm) {
  const AgentState& a = sim.agent(agent);
  RewardSample r;
  r.deadlocked = a.deadlocked;
  r.finished = a.phase == AgentPhase::Done;
  if (r.finished) {
    r.distance = 0;
  } else if (a.phase == AgentPhase::OnGrid) {
    r.distance = dm.at(sim.grid().index(a.cell), a.heading);
  } else {
    const AgentSpec& s = sim.specs()[static_cast<size_t>(agent)];
    if (auto d = dm.at(sim.grid().index(s.origin), s.direction)) r.distance = *d + 1;
  }
  return r;
}

inline double shaped_reward(const RewardSample& prev, const RewardSample& next, const RewardConfig& cfg = {}) {
  const double dd = prev.distance && next.distance ? static_cast<double>(*prev.distance - *next.distance) : 0.0;
  double r = cfg.progress * dd;
  if (next.deadlocked) r -= cfg.deadlock_penalty;
  if (next.finished && !prev.finished) r += cfg.finish_bonus;
  if (!next.finished) r -= cfg.step_penalty;
  return r;
}

// ---------------------------------------------------------------------------
// Decision-point mask

/// Drives agents on plain track itself (forward when the next cell is free,
/// otherwise stop) and asks the inner policy only for off-grid agents and
/// agents on stopping or decision cells.
class MaskedController : public Controller {
 public:
  explicit MaskedController(std::unique_ptr<AgentPolicy> inner) : inner_(std::move(inner)) {}
  std::string name() const override { return "masked-" + inner_->name(); }

  void reset(const Simulator& sim, Clock::time_point deadline) override {
    classes_ = classify_cells(sim.grid());
    inner_calls_ = 0;
    inner_->reset(sim, deadline);
  }

  std::vector<Action> act(const Simulator& sim, Clock::time_point) override {
    inner_->begin_step(sim);
    const RailGrid& g = sim.grid();
    std::vector<Action> acts(static_cast<size_t>(sim.num_agents()), Action::DoNothing);
    for (int i = 0; i < sim.num_agents(); ++i) {
      const AgentState& a = sim.agent(i);
      if (a.phase == AgentPhase::Done) continue;
      if (a.phase == AgentPhase::OnGrid) {
        const int cell = g.index(a.cell);
        if (classes_[static_cast<size_t>(cell)] == CellClass::NonDecision) {
          const DirectionSet ex = g.exits(cell, a.heading);
          const auto nb = ex.size() == 1 ? g.neighbor(cell, *ex.begin()) : std::nullopt;
          acts[static_cast<size_t>(i)] = nb && sim.occupant(*nb) < 0 ? Action::MoveForward : Action::Stop;
          continue;
        }
      }
      acts[static_cast<size_t>(i)] = inner_->decide(sim, i);
      ++inner_calls_;
    }
    return acts;
  }

  AgentPolicy& inner() { return *inner_; }
  int64_t inner_calls() const { return inner_calls_; }

 private:
  std::unique_ptr<AgentPolicy> inner_;
  std::vector<CellClass> classes_;
  int64_t inner_calls_ = 0;
};

// ---------------------------------------------------------------------------
// Observation dump: one JSON object per step.

struct ObservationConfig {
  int depth = 2;
  FeatureSet features = FeatureSet::Standard7;
  bool junction = true;
};

inline nlohmann::json observation_record(const Simulator& sim, const ObservationConfig& cfg, DistanceCache& cache,
                                         const ClusterIndex& ci, const std::vector<double>& handles) {
  nlohmann::json agents = nlohmann::json::array();
  const auto classes = classify_cells(sim.grid());
  for (int i = 0; i < sim.num_agents(); ++i) {
    const AgentState& a = sim.agent(i);
    if (a.phase == AgentPhase::Done) continue;
    const auto dm = cache.get(sim.specs()[static_cast<size_t>(i)].target);
    nlohmann::json rec{{"id", i}, {"tree", tree_observe(sim, i, cfg.depth, cfg.features, *dm, handles).values}};
    const auto root = observation_root(sim, i);
    const CellClass k = classes[static_cast<size_t>(state_cell(*root))];
    if (cfg.junction && (k == CellClass::Stopping || k == CellClass::Decision))
      rec["junction"] = junction_observe(sim, i, *dm, ci).values;
    else
      rec["junction"] = nullptr;
    rec["handle"] = handles[static_cast<size_t>(i)];
    agents.push_back(std::move(rec));
  }
  return {{"t", sim.time()}, {"agents", std::move(agents)}};
}

/// Wraps a controller and writes one observation line per step before acting.
class ObservationDumper : public Controller {
 public:
  ObservationDumper(std::unique_ptr<Controller> inner, std::ostream& out, ObservationConfig cfg = {})
      : inner_(std::move(inner)), out_(out), cfg_(cfg) {}
  std::string name() const override { return inner_->name(); }
  void reset(const Simulator& sim, Clock::time_point deadline) override {
    cache_ = std::make_unique<DistanceCache>(sim.grid_ptr());
    ci_ = std::make_unique<ClusterIndex>(sim.grid());
    handles_ = priority_handles(sim.setup().seed, sim.num_agents());
    inner_->reset(sim, deadline);
  }
  std::vector<Action> act(const Simulator& sim, Clock::time_point deadline) override {
    out_ << observation_record(sim, cfg_, *cache_, *ci_, handles_).dump() << '\n';
    return inner_->act(sim, deadline);
  }

 private:
  std::unique_ptr<Controller> inner_;
  std::ostream& out_;
  ObservationConfig cfg_;
  std::unique_ptr<DistanceCache> cache_;
  std::unique_ptr<ClusterIndex> ci_;
  std::vector<double> handles_;
};

}  // namespace railmapf
