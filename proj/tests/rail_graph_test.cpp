#include <gtest/gtest.h>

#include <queue>

#include "railmapf/env_gen.hpp"
#include "railmapf/rail_graph.hpp"
#include "support/fixtures.hpp"

using namespace railmapf;

namespace {

// Forward BFS from one (cell, heading) state using only transition-code queries.
int bfs_distance(const RailGrid& g, Cell from, Direction heading, Cell target) {
  const int n = g.num_cells();
  std::vector<int> dist(static_cast<size_t>(n) * 4, -1);
  auto id = [&](Cell c, Direction h) { return static_cast<size_t>(g.index(c)) * 4 + static_cast<size_t>(to_int(h)); };
  std::queue<std::pair<Cell, Direction>> q;
  dist[id(from, heading)] = 0;
  q.push({from, heading});
  while (!q.empty()) {
    auto [c, h] = q.front();
    q.pop();
    const int d = dist[id(c, h)];
    if (c == target) return d;
    for (Direction ex : kDirections) {
      if (!g.at(c).has(h, ex)) continue;
      const Cell nc = step(c, ex);
      if (!g.in_bounds(nc)) continue;
      if (dist[id(nc, ex)] >= 0) continue;
      dist[id(nc, ex)] = d + 1;
      q.push({nc, ex});
    }
  }
  return -1;
}

}  // namespace

TEST(BuildGraph, StraightCorridorFullForm) {
  const int L = 7;
  const auto g = build_graph(fixtures::straight_corridor(L));
  EXPECT_EQ(g.num_vertices(), 2 * L);
  EXPECT_EQ(g.num_edges(), 2 * (L - 1));
  for (int v = 0; v < g.num_vertices(); ++v)
    for (const GraphEdge& e : g.out_edges(v)) EXPECT_EQ(e.length, 1);
}

TEST(BuildGraph, CondensedCorridorBetweenSwitches) {
  // Siding from switch (1,3) to switch (1,8) along row 0: cells (0,3)..(0,8) then (1,8).
  const auto g = build_graph(fixtures::ring_with_siding(12, 6, 3, 8), true);
  const RailGrid& grid = g.grid();
  const int v = g.vertex(make_state(grid.index({1, 3}), Direction::E));
  ASSERT_GE(v, 0);
  bool found = false;
  for (const GraphEdge& e : g.out_edges(v)) {
    if (e.exit != Direction::N) continue;
    found = true;
    EXPECT_EQ(g.state(e.to), make_state(grid.index({1, 8}), Direction::S));
    EXPECT_EQ(e.length, static_cast<int>(e.corridor.size()) + 1);
    EXPECT_EQ(e.length, 7);  // six siding cells plus the far switch
  }
  EXPECT_TRUE(found);
  for (int u = 0; u < g.num_vertices(); ++u)
    EXPECT_EQ(classify_cells(grid)[static_cast<size_t>(state_cell(g.state(u)))], CellClass::Decision);
}

TEST(BuildGraph, OutDegreeAtMostTwo) {
  const auto env = generate(schedule(12), GenConfig{2});
  for (bool condensed : {false, true}) {
    const auto g = build_graph(env.grid, condensed);
    for (int v = 0; v < g.num_vertices(); ++v) EXPECT_LE(g.out_edges(v).size(), 2U);
  }
}

TEST(DistanceMap, TargetStatesAreZeroAndCorridorCountsCells) {
  const RailGrid g = fixtures::ring(10, 4);
  const auto dm = distance_map(g, {0, 6});
  for (Direction h : {Direction::E, Direction::W}) EXPECT_EQ(dm.at(g.index({0, 6}), h), 0);
  EXPECT_EQ(dm.at(g.index({0, 2}), Direction::E), 4);
  EXPECT_EQ(dm.at(g.index({0, 8}), Direction::W), 2);
  EXPECT_FALSE(dm.at(g.index({2, 5}), Direction::N).has_value());  // non-rail
}

TEST(DistanceMap, MatchesBfsOracleOnGeneratedGrids) {
  for (uint64_t seed = 0; seed < 3; ++seed) {
    TestParams p = schedule(2);
    p.x_dim = p.y_dim = 20 + static_cast<int>(seed) * 3;
    const auto env = generate(p, GenConfig{seed});
    const RailGrid& g = *env.grid;
    const Cell target = env.agents.front().target;
    const auto dm = distance_map(g, target);
    for (int c = 0; c < g.num_cells(); ++c)
      for (Direction h : kDirections) {
        if (g.exits(c, h).empty()) continue;
        const int oracle = bfs_distance(g, g.cell(c), h, target);
        const auto got = dm.at(c, h);
        if (oracle < 0) EXPECT_FALSE(got.has_value());
        else EXPECT_EQ(got, oracle);
      }
  }
}

TEST(DistanceMap, CondensedAgreesWithFull) {
  const auto env = generate(schedule(14), GenConfig{6});
  const auto full = build_graph(env.grid, false);
  const auto cond = build_graph(env.grid, true);
  for (size_t a = 0; a < env.agents.size(); a += 7) {
    const auto d1 = distance_map(full, env.agents[a].target);
    const auto d2 = distance_map(cond, env.agents[a].target);
    for (int v = 0; v < cond.num_vertices(); ++v) EXPECT_EQ(d1.raw(cond.state(v)), d2.raw(cond.state(v)));
    for (StateId s : full.states()) EXPECT_EQ(d1.raw(s), d2.raw(s));
  }
}

TEST(DistanceMap, BellmanFixedPoint) {
  const auto env = generate(schedule(10), GenConfig{3});
  const RailGrid& g = *env.grid;
  const auto graph = build_graph(env.grid);
  const auto dm = distance_map(g, env.agents[0].target);
  for (int v = 0; v < graph.num_vertices(); ++v) {
    const StateId s = graph.state(v);
    if (dm.raw(s) == 0 || !dm.reachable(s)) continue;
    int best = INT32_MAX;
    for (const GraphEdge& e : graph.out_edges(v))
      if (dm.reachable(graph.state(e.to))) best = std::min(best, dm.raw(graph.state(e.to)) + e.length);
    EXPECT_EQ(dm.raw(s), best);
  }
}

TEST(ShortestPath, LengthEqualsDistance) {
  const auto env = generate(schedule(8), GenConfig{9});
  const RailGrid& g = *env.grid;
  for (const AgentSpec& a : env.agents) {
    const auto dm = distance_map(g, a.target);
    const StateId s = make_state(g.index(a.origin), a.direction);
    const auto path = shortest_path(g, dm, s);
    ASSERT_FALSE(path.empty());
    EXPECT_EQ(static_cast<int>(path.size()) - 1, dm.raw(s));
    EXPECT_EQ(state_cell(path.back()), g.index(a.target));
  }
}

TEST(Graph, SimulatorMovesAreGraphEdges) {
  const auto env = generate(schedule(9, 1), GenConfig{1});
  const auto graph = build_graph(env.grid);
  Simulator sim(env.episode(2));
  Rng rng(4);
  std::vector<std::optional<PositionRecord>> prev(env.agents.size());
  while (!sim.terminated()) {
    std::vector<Action> acts(env.agents.size());
    for (auto& a : acts) a = action_from_int(static_cast<int>(uniform_int(rng, 1, 3)));
    sim.step(acts);
    for (size_t i = 0; i < acts.size(); ++i) {
      const auto pos = sim.position(static_cast<int>(i));
      if (pos && prev[i] && pos->cell != prev[i]->cell) {
        const int v = graph.vertex(make_state(env.grid->index(prev[i]->cell), prev[i]->heading));
        ASSERT_GE(v, 0);
        bool edge = false;
        for (const GraphEdge& e : graph.out_edges(v))
          edge = edge || graph.state(e.to) == make_state(env.grid->index(pos->cell), pos->heading);
        ASSERT_TRUE(edge);
      }
      prev[i] = pos;
    }
  }
}

TEST(Dot, ExportMentionsEveryVertex) {
  const auto g = build_graph(fixtures::ring_with_siding(12, 6, 3, 8), true);
  const std::string dot = to_dot(g);
  EXPECT_NE(dot.find("digraph"), std::string::npos);
  EXPECT_NE(dot.find("v" + std::to_string(g.num_vertices() - 1) + " "), std::string::npos);
}
