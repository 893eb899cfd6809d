#include <gtest/gtest.h>

#include <climits>
#include <cmath>
#include <set>
#include <map>
#include <tuple>

#include "railmapf/env_gen.hpp"
#include "railmapf/exec_policy.hpp"
#include "railmapf/obs_reward.hpp"
#include "support/fixtures.hpp"

using namespace railmapf;

namespace {

Clock::time_point far_future() { return Clock::now() + std::chrono::hours(1); }

void run(Simulator& sim, Controller& ctl) {
  ctl.reset(sim, far_future());
  while (!sim.terminated()) sim.step(ctl.act(sim, far_future()));
}

Environment small_env(int test, int env, uint64_t seed) { return generate(schedule(test, env), GenConfig{seed}); }

using Entry = std::pair<int, int>;  // (time, agent)

// Cell entries implied by a solution: per cell, sorted by (time, agent).
std::map<int, std::vector<Entry>> planned_entries(const Solution& sol) {
  std::map<int, std::vector<Entry>> out;
  for (size_t i = 0; i < sol.paths.size(); ++i) {
    const TimedPath& p = sol.paths[i];
    int prev = -1;
    for (int t = p.start_time; !p.empty() && t <= p.arrival(); ++t) {
      const int c = state_cell(*p.at(t));
      if (c != prev) out[c].push_back({t, static_cast<int>(i)});
      prev = c;
    }
  }
  for (auto& [c, v] : out) std::sort(v.begin(), v.end());
  return out;
}

// Cell entries observed in a trace, including the arrival on the target.
std::map<int, std::vector<Entry>> realized_entries(const EpisodeTrace& tr, const RailGrid& g) {
  std::map<int, std::vector<Entry>> out;
  const size_t n = tr.header.agents.size();
  std::vector<int> prev(n, -1);
  for (const StepRecord& r : tr.steps) {
    for (size_t i = 0; i < n; ++i) {
      const auto& p = r.positions[i];
      if (!p) continue;
      const int c = g.index(p->cell);
      if (c != prev[i]) out[c].push_back({r.t + 1, static_cast<int>(i)});
      prev[i] = c;
    }
    for (int a : r.arrived) out[g.index(tr.header.agents[static_cast<size_t>(a)].target)].push_back({r.t + 1, a});
  }
  return out;
}

std::vector<int> agents_of(const std::vector<Entry>& v) {
  std::vector<int> out;
  for (const Entry& e : v) out.push_back(e.second);
  return out;
}

}  // namespace

TEST(Mcp, WithoutMalfunctionsReproducesPlan) {
  for (uint64_t seed : {1u, 2u, 3u}) {
    const Environment env = small_env(4, 0, seed);
    Simulator sim(env.episode(seed));
    PlanControllerConfig cfg;
    cfg.partial_replan = false;
    PlanController ctl(cfg);
    run(sim, ctl);
    const Solution& sol = ctl.solution();
    ASSERT_TRUE(check_solution(*env.grid, sol, env.agents).empty());
    for (int i = 0; i < sim.num_agents(); ++i) {
      if (!sol.planned(i)) continue;
      EXPECT_EQ(sim.agent(i).arrival_time, sol.paths[static_cast<size_t>(i)].arrival()) << "seed " << seed << " agent " << i;
    }
  }
}

TEST(Mcp, PreservesPlannedVisitOrderUnderMalfunctions) {
  int checked = 0;
  for (int k = 2; k <= 5; ++k)
    for (int l = 1; l <= 3; ++l) {
      const Environment env = small_env(k, l, 10 + static_cast<uint64_t>(k));
      EpisodeSetup setup = env.episode(77);
      setup.malfunction.rate = 0.05;
      Simulator sim(setup);
      PlanControllerConfig cfg;
      cfg.partial_replan = false;
      PlanController ctl(cfg);
      run(sim, ctl);
      const auto planned = planned_entries(ctl.solution());
      const auto realized = realized_entries(sim.trace(), *env.grid);
      for (const auto& [cell, seq] : realized) {
        const auto want = agents_of(planned.at(cell));
        const auto got = agents_of(seq);
        ASSERT_LE(got.size(), want.size());
        EXPECT_TRUE(std::equal(got.begin(), got.end(), want.begin())) << "cell " << cell;
        ++checked;
      }
    }
  EXPECT_GT(checked, 0);
}

TEST(Mcp, LeaderMalfunctionHoldsFollower) {
  auto grid = fixtures::share(fixtures::ring(12, 5));
  const std::vector<AgentSpec> specs{{{0, 4}, Direction::E, {0, 10}}, {{0, 1}, Direction::E, {0, 9}}};
  MalfunctionParams m;
  m.scripted.push_back({2, 0, 6});
  Simulator sim(reset(grid, specs, m, 0, 100));
  PlanController ctl;
  run(sim, ctl);
  for (const StepRecord& r : sim.trace().steps) EXPECT_TRUE(r.deadlocks.empty());
  ASSERT_EQ(sim.agent(0).phase, AgentPhase::Done);
  ASSERT_EQ(sim.agent(1).phase, AgentPhase::Done);
  const Solution& plan = ctl.solution();
  const int leader_delay = sim.agent(0).arrival_time - plan.paths[0].arrival();
  EXPECT_GT(leader_delay, 0);
  // The follower never overtakes on a single track, so it is delayed too.
  EXPECT_GT(sim.agent(1).arrival_time, plan.paths[1].arrival());
  const auto realized = realized_entries(sim.trace(), *grid);
  for (const auto& [cell, seq] : realized) {
    const auto want = agents_of(planned_entries(plan).at(cell));
    EXPECT_EQ(agents_of(seq), want);
  }
}

TEST(Mcp, RandomInstancesWithMalfunctionsNeverDeadlock) {
  int instances = 0;
  for (int k = 1; k <= 4; ++k)
    for (int l = 1; l <= 5; ++l) {
      const Environment env = small_env(k, l, 100 + static_cast<uint64_t>(10 * k + l));
      EpisodeSetup setup = env.episode(5 + static_cast<uint64_t>(l));
      setup.malfunction.rate = std::max(setup.malfunction.rate, 0.02);
      Simulator sim(setup);
      PlanController ctl;
      ASSERT_NO_THROW(run(sim, ctl)) << "test " << k << " env " << l;
      for (const StepRecord& r : sim.trace().steps) EXPECT_TRUE(r.deadlocks.empty()) << "test " << k << " env " << l;
      ++instances;
    }
  EXPECT_EQ(instances, 20);
}

TEST(Mcp, DeviationIsReported) {
  auto grid = fixtures::share(fixtures::ring_with_siding(12, 5, 3, 8));
  const std::vector<AgentSpec> specs{{{1, 1}, Direction::E, {1, 10}}};
  Simulator sim(reset(grid, specs, {}, 0, 100));
  PlanningContext ctx(grid, specs, 100);
  const PlanResult pr = prioritized_plan(ctx, {0});
  McpExecutor exec(grid->num_cells(), 1);
  exec.load(pr.solution, sim);
  while (sim.agent(0).phase != AgentPhase::OnGrid || sim.agent(0).cell != Cell{1, 3}) sim.step(exec.actions(sim));
  sim.step({Action::MoveLeft});  // onto the siding; the plan stays on the main line
  EXPECT_THROW(exec.sync(sim), McpDeviation);
}

TEST(PartialReplan, DetourAroundBrokenLeader) {
  auto grid = fixtures::share(fixtures::ring_with_siding(12, 5, 3, 8));
  const std::vector<AgentSpec> specs{{{1, 5}, Direction::E, {2, 11}}, {{1, 1}, Direction::E, {1, 10}}};
  MalfunctionParams m;
  m.scripted.push_back({2, 0, 20});
  const int t_max = 100;
  Simulator sim(reset(grid, specs, m, 0, t_max));
  PlanningContext ctx(grid, specs, t_max);
  const PlanResult pr = prioritized_plan(ctx, {0, 1});
  ASSERT_TRUE(pr.failed.empty());
  McpExecutor exec(grid->num_cells(), 2);
  exec.load(pr.solution, sim);
  while (sim.last_outcome().malfunctions.empty()) sim.step(exec.actions(sim));
  exec.sync(sim);

  const auto affected = affected_agents(sim, exec, 0);
  EXPECT_EQ(affected, std::vector<int>{1});

  const Solution projected = project(sim, exec, ctx.horizon());
  const auto r = partial_replan(0, sim, exec, ctx, far_future());
  ASSERT_TRUE(r);
  EXPECT_EQ(r->improved, std::vector<int>{1});
  const TimedPath& detour = r->solution.paths[1];
  EXPECT_LT(detour.arrival(), projected.paths[1].arrival());

  // Oracle: exhaustive time-expanded search against the projected leader.
  SafeIntervalTable table(grid->num_cells());
  table.reserve_path(projected.paths[0]);
  PlanRequest req;
  req.agent = 1;
  req.off_grid = false;
  req.start = make_state(grid->index(sim.agent(1).cell), sim.agent(1).heading);
  req.start_time = sim.time();
  req.target = grid->index(specs[1].target);
  req.horizon = ctx.horizon();
  const auto best = time_expanded_astar(*grid, *ctx.distances(1), req, table);
  ASSERT_TRUE(best);
  EXPECT_EQ(detour.arrival(), best->arrival());
  bool on_siding = false;
  for (StateId s : detour.states) on_siding |= grid->cell(state_cell(s)).row == 0;
  EXPECT_TRUE(on_siding);

  // Executing the replanned schedule realizes the new arrival.
  exec.load(r->solution, sim);
  while (!sim.terminated()) sim.step(exec.actions(sim));
  EXPECT_EQ(sim.agent(1).arrival_time, detour.arrival());
  EXPECT_EQ(sim.agent(0).arrival_time, r->solution.paths[0].arrival());
}

TEST(PartialReplan, NeverWorseThanPureMcp) {
  // With malfunctions known only when they strike, pure MCP realizes the
  // projection, and replanning only accepts strictly earlier arrivals.
  int compared = 0;
  for (uint64_t seed : {3u, 4u, 5u, 6u}) {
    const Environment env = small_env(5, 0, seed);
    EpisodeSetup setup = env.episode(seed);
    for (int i = 0; i < static_cast<int>(env.agents.size()); i += 2) setup.malfunction.scripted.push_back({8, i, 15});
    std::vector<int> arrival[2];
    int replans = 0;
    for (int variant = 0; variant < 2; ++variant) {
      Simulator sim(setup);
      PlanControllerConfig cfg;
      cfg.partial_replan = variant == 1;
      PlanController ctl(cfg);
      run(sim, ctl);
      for (const AgentState& a : sim.agents()) arrival[variant].push_back(a.phase == AgentPhase::Done ? a.arrival_time : INT_MAX);
      if (variant == 1) replans = ctl.replans();
    }
    for (size_t i = 0; i < arrival[0].size(); ++i) EXPECT_LE(arrival[1][i], arrival[0][i]) << "seed " << seed << " agent " << i;
    compared += replans;
  }
  EXPECT_GT(compared, 0);
}

TEST(ConflictGraph, TriangleAndWindow) {
  const std::vector<std::vector<TimedCell>> tri{{{1, 0}, {2, 5}}, {{1, 3}, {3, 9}}, {{2, 8}, {3, 12}}};
  const ConflictGraph g = build_conflict_graph(tri, 50);
  EXPECT_EQ(g.num_edges(), 3);
  EXPECT_TRUE(g.has_edge(0, 1) && g.has_edge(0, 2) && g.has_edge(1, 2));
  const auto lv = assign_priorities(g);
  EXPECT_EQ(std::set<int>(lv.begin(), lv.end()).size(), 3u);

  const std::vector<std::vector<TimedCell>> edge{{{4, 0}}, {{4, 50}}}, gap{{{4, 0}}, {{4, 51}}};
  EXPECT_EQ(build_conflict_graph(edge, 50).num_edges(), 1);
  EXPECT_EQ(build_conflict_graph(gap, 50).num_edges(), 0);
}

TEST(ConflictGraph, StarColoring) {
  // K_{1,3}: centre 2 shares a cell with each leaf, leaves share nothing.
  const std::vector<std::vector<TimedCell>> star{{{10, 0}}, {{11, 0}}, {{10, 1}, {11, 1}, {12, 1}}, {{12, 2}}};
  const ConflictGraph g = build_conflict_graph(star);
  EXPECT_EQ(g.num_edges(), 3);
  EXPECT_EQ(g.max_degree(), 3);
  const auto lv = assign_priorities(g);
  EXPECT_EQ(lv[2], 0);
  for (int leaf : {0, 1, 3}) EXPECT_EQ(lv[static_cast<size_t>(leaf)], 1);
}

TEST(ConflictGraph, ColoringIsProperOnGeneratedIntents) {
  const Environment env = small_env(8, 0, 4);
  PlanningContext ctx(env.grid, env.agents, env.t_max());
  const PlanResult pr = prioritized_plan(ctx, all_agents(ctx));
  const ConflictGraph g = build_conflict_graph(intents_from(pr.solution));
  const auto lv = assign_priorities(g);
  int colors = 0;
  for (int v = 0; v < g.num_vertices(); ++v) {
    colors = std::max(colors, lv[static_cast<size_t>(v)] + 1);
    for (int u : g.neighbors(v)) EXPECT_NE(lv[static_cast<size_t>(u)], lv[static_cast<size_t>(v)]);
  }
  EXPECT_LE(colors, g.max_degree() + 1);
}

TEST(TrafficLights, AtMostOneAgentPerCluster) {
  for (uint64_t seed : {1u, 2u, 3u}) {
    const Environment env = small_env(6, 1, seed);
    Simulator sim(env.episode(seed));
    MaskedController ctl(std::make_unique<HeuristicPolicy>());
    run(sim, ctl);
    const auto clusters = find_clusters(*env.grid);
    std::map<int, int> member;
    for (size_t k = 0; k < clusters.size(); ++k)
      for (Cell c : clusters[k].members) member[env.grid->index(c)] = static_cast<int>(k);
    for (const StepRecord& r : sim.trace().steps) {
      std::map<int, int> count;
      for (const auto& p : r.positions) {
        if (!p) continue;
        auto it = member.find(env.grid->index(p->cell));
        if (it != member.end()) EXPECT_LE(++count[it->second], 1) << "t=" << r.t + 1;
      }
    }
  }
}

TEST(TrafficLights, GreenHolderKeepsPriority) {
  // Two agents approach the crossing at (3,3) from different entries.
  auto grid = fixtures::share(fixtures::crossing_rings());
  const std::vector<AgentSpec> specs{{{3, 1}, Direction::E, {3, 7}}, {{1, 3}, Direction::S, {7, 3}}};
  Simulator sim(reset(grid, specs, {}, 0, 100));
  TrafficLights lights(*grid);
  const int crossing = grid->index({3, 3});
  const int k = lights.cluster_of(crossing);
  ASSERT_GE(k, 0);
  EXPECT_EQ(lights.cluster_of(grid->index({3, 2})), -1);
  sim.step({Action::MoveForward, Action::Stop});
  sim.step({Action::MoveForward, Action::MoveForward});
  ASSERT_EQ(sim.agent(0).cell, (Cell{3, 2}));
  auto allow = lights.control(sim, {crossing, -1});
  EXPECT_TRUE(allow[0]);
  sim.step({Action::Stop, Action::MoveForward});
  ASSERT_EQ(sim.agent(1).cell, (Cell{2, 3}));
  allow = lights.control(sim, {crossing, crossing});
  EXPECT_TRUE(allow[0]);
  EXPECT_FALSE(allow[1]);
  EXPECT_EQ(lights.lights()[static_cast<size_t>(k)].green_agent, 0);
  sim.step({Action::MoveForward, Action::Stop});
  ASSERT_EQ(sim.agent(0).cell, (Cell{3, 3}));
  allow = lights.control(sim, {grid->index({3, 4}), crossing});
  EXPECT_TRUE(allow[0]);
  EXPECT_FALSE(allow[1]);  // cluster occupied
  sim.step({Action::MoveForward, Action::Stop});
  allow = lights.control(sim, {grid->index({3, 5}), crossing});
  EXPECT_TRUE(allow[1]);
}

TEST(DepartureGate, ThresholdScheduleAndCap) {
  DepartureGate gate;
  const int t_max = 400;
  auto linear = [&](int t) {
    const double x = std::min(1.0, t / (0.5 * t_max));
    return 0.92 - (0.92 - 0.5) * x;
  };
  for (int t : {0, 50, 100, 199, 200, 300, 400}) EXPECT_NEAR(gate.threshold(t, t_max), linear(t), 1e-12);
  EXPECT_EQ(gate.cap(RailGrid(25, 25)), 12);
  EXPECT_EQ(gate.cap(RailGrid(10, 6)), 4);
  gate.soft_cap = 7;
  EXPECT_EQ(gate.cap(RailGrid(25, 25)), 7);
}

TEST(DepartureGate, LogisticPredictor) {
  const LogisticPredictor p;
  const GateFeatures f{0.5, 0.25, 2.0};
  const double z = 4.0 - 3.0 * 0.5 - 4.0 * 0.25 - 0.25 * 2.0;
  EXPECT_NEAR(p(f), 1.0 / (1.0 + std::exp(-z)), 1e-12);
  EXPECT_GT(p({0.1, 0.0, 0.0}), p({0.9, 0.0, 0.0}));
  EXPECT_GT(p({0.1, 0.0, 0.0}), p({0.1, 0.9, 0.0}));
  EXPECT_GT(p({0.1, 0.0, 0.0}), p({0.1, 0.0, 5.0}));
}

TEST(DepartureGate, AdmitsAboveThresholdBelowCap) {
  DepartureGate gate;
  gate.predictor = [](const GateFeatures& f) { return f.distance_ratio; };  // score read from the feature
  const std::vector<GateCandidate> c{{0, {0.95, 0, 0}}, {1, {0.80, 0, 0}}, {2, {0.60, 0, 0}}};
  EXPECT_EQ(departure_gate(c, gate, 0, 100, 0, 4), std::vector<int>{0});
  EXPECT_EQ(departure_gate(c, gate, 25, 100, 0, 4), (std::vector<int>{0, 1}));
  EXPECT_EQ(departure_gate(c, gate, 60, 100, 0, 4), (std::vector<int>{0, 1, 2}));
  EXPECT_TRUE(departure_gate(c, gate, 60, 100, 4, 4).empty());
}

TEST(Heuristic, SingleAgentFollowsShortestPath) {
  auto grid = fixtures::share(fixtures::ring(10, 6));
  const std::vector<AgentSpec> specs{{{0, 1}, Direction::E, {0, 8}}};
  Simulator sim(reset(grid, specs, {}, 0, 60));
  MaskedController ctl(std::make_unique<HeuristicPolicy>());
  run(sim, ctl);
  ASSERT_EQ(sim.agent(0).phase, AgentPhase::Done);
  const auto d = distance_map(*grid, specs[0].target).at(grid->index(specs[0].origin), specs[0].direction);
  EXPECT_EQ(sim.agent(0).arrival_time, 1 + *d);
}

TEST(PlanController, LazyPlanningEventuallyPlansEveryone) {
  const Environment env = small_env(6, 0, 9);
  Simulator sim(env.episode(9));
  PlanControllerConfig cfg;
  cfg.lazy_threshold = 2;
  PlanController ctl(cfg);
  run(sim, ctl);
  for (const StepRecord& r : sim.trace().steps) EXPECT_TRUE(r.deadlocks.empty());
  EXPECT_EQ(ctl.solution().num_planned(), sim.num_agents());
  EXPECT_EQ(sim.num_done(), sim.num_agents());
}
