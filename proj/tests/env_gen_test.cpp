#include <gtest/gtest.h>

#include <cmath>

#include "railmapf/env_gen.hpp"

using namespace railmapf;

namespace {

// The recurrence evaluated in floating point, independently of the integer implementation.
std::vector<int> agent_sequence_by_float() {
  std::vector<int> seq{1};
  for (int k = 1; k < kNumTests; ++k) {
    const double n = seq.back();
    seq.push_back(static_cast<int>(n + std::ceil(0.75 * std::pow(10.0, std::floor(std::log10(n))))));
  }
  return seq;
}

}  // namespace

TEST(Schedule, FirstMiddleLastTests) {
  const TestParams k0 = schedule(0);
  EXPECT_EQ(k0.n_agents, 1);
  EXPECT_EQ(k0.n_cities, 2);
  EXPECT_EQ(k0.x_dim, 25);
  EXPECT_EQ(k0.y_dim, 25);
  const TestParams k22 = schedule(22);
  EXPECT_EQ(k22.n_agents, 181);
  EXPECT_EQ(k22.n_cities, 20);
  EXPECT_EQ(k22.x_dim, 62);
  const TestParams k40 = schedule(40);
  EXPECT_EQ(k40.n_agents, 6256);
  EXPECT_EQ(k40.n_cities, 627);
  EXPECT_EQ(k40.x_dim, 314);
  EXPECT_THROW(schedule(41), std::out_of_range);
  EXPECT_THROW(schedule(-1), std::out_of_range);
}

TEST(Schedule, AgentSequenceMatchesRecurrence) {
  const auto expect = agent_sequence_by_float();
  for (int k = 0; k < kNumTests; ++k) EXPECT_EQ(agents_for_test(k), expect[static_cast<size_t>(k)]) << k;
  for (int k = 1; k < kNumTests; ++k) {
    const int prev = agents_for_test(k - 1), inc = agents_for_test(k) - prev;
    const int want = prev < 10 ? 1 : prev < 100 ? 8 : prev < 1000 ? 75 : 750;
    EXPECT_EQ(inc, want) << k;
  }
  EXPECT_EQ(agents_for_test(9), 10);
  EXPECT_EQ(agents_for_test(10), 18);
  EXPECT_EQ(agents_for_test(21), 106);
}

TEST(Schedule, DimensionFormula) {
  for (int k = 0; k < kNumTests; ++k) {
    const TestParams p = schedule(k);
    const double exact = std::ceil(std::sqrt(6.0 * 25.0 * p.n_cities)) + 7;
    EXPECT_EQ(p.x_dim, static_cast<int>(exact)) << k;
    EXPECT_EQ(p.n_cities, p.n_agents / 10 + 2);
  }
}

TEST(MalfunctionRate, Values) {
  EXPECT_EQ(malfunction_rate(0), 0.0);
  EXPECT_DOUBLE_EQ(malfunction_rate(1), 0.004);
  EXPECT_DOUBLE_EQ(malfunction_rate(5), 1.0 / 1250);
  EXPECT_THROW(malfunction_rate(10), std::out_of_range);
}

TEST(FullSchedule, ShapeAndMonotonicity) {
  const auto all = full_schedule();
  ASSERT_EQ(all.size(), 410U);
  for (int k = 0; k < kNumTests; ++k)
    for (int l = 0; l < kEnvsPerTest; ++l) {
      const TestParams& p = all[static_cast<size_t>(k * 10 + l)];
      EXPECT_EQ(p.test, k);
      EXPECT_EQ(p.env, l);
      EXPECT_EQ(p.malfunction_interval, l * 250);
      EXPECT_EQ(p.n_agents, all[static_cast<size_t>(k * 10)].n_agents);
      EXPECT_EQ(p.x_dim, all[static_cast<size_t>(k * 10)].x_dim);
      if (k > 0) {
        EXPECT_GT(p.n_agents, all[static_cast<size_t>((k - 1) * 10)].n_agents);
      }
    }
}

TEST(Generate, SmallestTestIsValid) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const Environment env = generate(schedule(0), GenConfig{seed});
    EXPECT_EQ(env.grid->width(), 25);
    EXPECT_EQ(env.grid->height(), 25);
    EXPECT_EQ(env.cities.size(), 2U);
    EXPECT_EQ(env.agents.size(), 1U);
    const auto report = validate_grid(*env.grid);
    EXPECT_TRUE(report.ok()) << report.violations.size();
    EXPECT_EQ(env.t_max(), 404);
  }
}

TEST(Generate, Deterministic) {
  const Environment a = generate(schedule(8, 3), GenConfig{42});
  const Environment b = generate(schedule(8, 3), GenConfig{42});
  EXPECT_EQ(*a.grid, *b.grid);
  EXPECT_EQ(a.agents, b.agents);
  EXPECT_EQ(environment_to_json(a).dump(), environment_to_json(b).dump());
  const Environment c = generate(schedule(8, 3), GenConfig{43});
  EXPECT_NE(environment_to_json(a).dump(), environment_to_json(c).dump());
}

TEST(Generate, AllTargetsReachable) {
  const Environment env = generate(schedule(3), GenConfig{5});
  EXPECT_EQ(env.cities.size(), 2U);
  ASSERT_EQ(env.agents.size(), 4U);
  for (const AgentSpec& a : env.agents) EXPECT_TRUE(reachable(*env.grid, a.origin, a.direction, a.target));
}

TEST(Generate, StructuralContract) {
  for (int k : {0, 5, 10, 14, 18, 22}) {
    for (uint64_t seed = 0; seed < 3; ++seed) {
      const TestParams p = schedule(k, static_cast<int>(seed));
      const Environment env = generate(p, GenConfig{seed});
      const RailGrid& g = *env.grid;
      ASSERT_TRUE(validate_grid(g).ok()) << k;
      ASSERT_EQ(static_cast<int>(env.cities.size()), p.n_cities);
      ASSERT_EQ(static_cast<int>(env.agents.size()), p.n_agents);
      EXPECT_DOUBLE_EQ(env.malfunction.rate, p.malfunction_rate());
      const auto cls = classify_cells(g);
      for (const AgentSpec& a : env.agents) {
        EXPECT_NE(a.origin, a.target);
        EXPECT_NE(cls[static_cast<size_t>(g.index(a.origin))], CellClass::Decision);
        EXPECT_NE(cls[static_cast<size_t>(g.index(a.target))], CellClass::Decision);
        EXPECT_TRUE(reachable(g, a.origin, a.direction, a.target));
      }
      // every city reaches every other city
      const AgentSpec& a0 = env.agents.front();
      for (const City& c : env.cities) EXPECT_TRUE(reachable(g, a0.origin, a0.direction, c.stations.front()));
      // at most max_rails_in_city junction connections per city: one per ring side
      for (const City& c : env.cities) {
        int junctions = 0;
        for (int r = c.top; r <= c.bottom; ++r)
          for (int col = c.left; col <= c.right; ++col)
            if (is_decision_cell(g.at(Cell{r, col}))) ++junctions;
        EXPECT_LE(junctions / 2, p.max_rails_in_city);
      }
      // accepted by the simulator
      EXPECT_NO_THROW(Simulator sim(env.episode(1)));
    }
  }
}

TEST(Generate, FailureCarriesSeedAndTest) {
  TestParams p = schedule(0);
  p.x_dim = p.y_dim = 9;
  try {
    generate(p, GenConfig{99});
    FAIL() << "expected failure";
  } catch (const GenerationError& e) {
    EXPECT_EQ(e.seed(), 99U);
    EXPECT_EQ(e.test(), 0);
  }
}

TEST(EnvironmentJson, RoundTrip) {
  const Environment env = generate(schedule(4, 2), GenConfig{1});
  const Environment back = environment_from_json(environment_to_json(env));
  EXPECT_EQ(*back.grid, *env.grid);
  EXPECT_EQ(back.agents, env.agents);
  EXPECT_EQ(back.cities, env.cities);
  EXPECT_EQ(back.malfunction, env.malfunction);
  EXPECT_EQ(back.t_max(), env.t_max());
}
