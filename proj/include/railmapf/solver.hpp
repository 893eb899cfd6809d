#pragma once

// Prioritized planning, large-neighbourhood improvement, the iteration budget
// allocator and the lazy-planning partition.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "railmapf/planning.hpp"
#include "railmapf/rail_graph.hpp"
#include "railmapf/rng.hpp"
#include "railmapf/sipp.hpp"

namespace railmapf {

using Clock = std::chrono::steady_clock;

/// Grid, agent specs, horizon and a shared distance-map cache.
class PlanningContext {
 public:
  PlanningContext(std::shared_ptr<const RailGrid> grid, std::vector<AgentSpec> specs, int t_max)
      : grid_(std::move(grid)), specs_(std::move(specs)), t_max_(t_max),
        distances_(std::make_shared<DistanceCache>(grid_)) {}

  const RailGrid& grid() const { return *grid_; }
  std::shared_ptr<const RailGrid> grid_ptr() const { return grid_; }
  const std::vector<AgentSpec>& specs() const { return specs_; }
  const AgentSpec& spec(int i) const { return specs_[static_cast<size_t>(i)]; }
  int num_agents() const { return static_cast<int>(specs_.size()); }
  int t_max() const { return t_max_; }
  int horizon() const { return 2 * t_max_; }

  std::shared_ptr<const DistanceMap> distances(int agent) const { return distances_->get(spec(agent).target); }

  /// Free-flow moves from the origin (the agent also needs one step to appear).
  int free_flow(int agent) const {
    const AgentSpec& s = spec(agent);
    return distances(agent)->raw(make_state(grid_->index(s.origin), s.direction));
  }

  PlanRequest departure(int agent, int earliest = 1) const {
    return departure_request(*grid_, agent, spec(agent), earliest, horizon());
  }

 private:
  std::shared_ptr<const RailGrid> grid_;
  std::vector<AgentSpec> specs_;
  int t_max_;
  std::shared_ptr<DistanceCache> distances_;
};

enum class OrderingRule : uint8_t { ShortestFirst, LongestFirst, ById };

/// Agents sorted by the rule; ties by id.
inline std::vector<int> priority_order(const PlanningContext& ctx, std::vector<int> agents,
                                       OrderingRule rule = OrderingRule::ShortestFirst) {
  if (rule == OrderingRule::ById) {
    std::sort(agents.begin(), agents.end());
    return agents;
  }
  std::vector<int> dist(static_cast<size_t>(ctx.num_agents()), 0);
  for (int a : agents) dist[static_cast<size_t>(a)] = ctx.free_flow(a);
  std::stable_sort(agents.begin(), agents.end(), [&](int a, int b) {
    const int da = dist[static_cast<size_t>(a)], db = dist[static_cast<size_t>(b)];
    if (da != db) return rule == OrderingRule::ShortestFirst ? da < db : da > db;
    return a < b;
  });
  return agents;
}

inline std::vector<int> all_agents(const PlanningContext& ctx) {
  std::vector<int> v(static_cast<size_t>(ctx.num_agents()));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

struct PlanResult {
  Solution solution;
  std::vector<int> failed;
};

/// Plans requests in order, reserving each path before the next. Failures are
/// reported, never fatal. `table` is updated with every produced path.
inline PlanResult prioritized_plan(const PlanningContext& ctx, const std::vector<PlanRequest>& requests,
                                   SafeIntervalTable& table) {
  PlanResult out{Solution(static_cast<size_t>(ctx.num_agents())), {}};
  for (const PlanRequest& req : requests) {
    const auto dm = ctx.distances(req.agent);
    auto path = sipp_plan(ctx.grid(), *dm, req, table);
    if (!path) {
      out.failed.push_back(req.agent);
      continue;
    }
    table.reserve_path(*path);
    out.solution.paths[static_cast<size_t>(req.agent)] = std::move(*path);
  }
  return out;
}

/// Departure-from-origin planning of `ordering` (agents off grid at t = 0).
inline PlanResult prioritized_plan(const PlanningContext& ctx, const std::vector<int>& ordering,
                                   SafeIntervalTable& table) {
  std::vector<PlanRequest> reqs;
  reqs.reserve(ordering.size());
  for (int a : ordering) reqs.push_back(ctx.departure(a));
  return prioritized_plan(ctx, reqs, table);
}

inline PlanResult prioritized_plan(const PlanningContext& ctx, const std::vector<int>& ordering) {
  SafeIntervalTable table(ctx.grid().num_cells());
  return prioritized_plan(ctx, ordering, table);
}

inline SafeIntervalTable table_from(const PlanningContext& ctx, const Solution& sol,
                                    const std::vector<uint8_t>& skip = {}) {
  SafeIntervalTable table(ctx.grid().num_cells());
  for (size_t i = 0; i < sol.paths.size(); ++i)
    if (!sol.paths[i].empty() && (skip.empty() || !skip[i])) table.reserve_path(sol.paths[i]);
  return table;
}

// ---------------------------------------------------------------------------
// Large neighbourhood search

enum class NeighborhoodKind : uint8_t { Random = 0, Congestion = 1, Delay = 2 };

struct SolverConfig {
  OrderingRule ordering = OrderingRule::ShortestFirst;
  int neighborhood_size = 8;
  int max_iterations = 200;
  double time_budget_s = 10.0;  // wall clock per environment for improvement
  int workers = 4;
  uint64_t seed = 0;
  double reaction = 0.1;       // roulette weight update rate
  double min_weight = 0.05;
  double anneal_share = 0.9;   // budget allocator: fraction of fair share
  double anneal_cooling = 1.0; // budget allocator: decay of the share as time runs out
  double default_iteration_cost_s = 0.01;
};

struct LnsStats {
  std::vector<int64_t> cost_trajectory;  // best cost after each iteration (first entry: input)
  int iterations = 0;
  int adopted = 0;
  std::array<double, 3> weights{1.0, 1.0, 1.0};
};

namespace detail {

inline void fill_random(std::vector<int>& chosen, std::vector<uint8_t>& in, const std::vector<int>& pool, size_t size,
                        Rng& rng) {
  std::vector<int> rest;
  for (int a : pool)
    if (!in[static_cast<size_t>(a)]) rest.push_back(a);
  shuffle(rest, rng);
  for (int a : rest) {
    if (chosen.size() >= size) break;
    chosen.push_back(a);
    in[static_cast<size_t>(a)] = 1;
  }
}

}  // namespace detail

/// Subset of planned agents to destroy and replan.
///  Random: uniform sample.
///  Congestion: agents through a cell drawn in proportion to how many distinct
///    agents visit it (cells visited by one agent are ignored).
///  Delay: the agent with the largest delay over free flow, then agents whose
///    paths share cells with it.
/// Results are filled up with random agents to the requested size.
inline std::vector<int> select_neighborhood(const PlanningContext& ctx, const Solution& sol, Rng& rng, size_t size,
                                            NeighborhoodKind kind) {
  std::vector<int> pool;
  for (size_t i = 0; i < sol.paths.size(); ++i)
    if (!sol.paths[i].empty()) pool.push_back(static_cast<int>(i));
  size = std::min(size, pool.size());
  std::vector<int> chosen;
  std::vector<uint8_t> in(sol.paths.size(), 0);
  auto take = [&](int a) {
    if (chosen.size() < size && !in[static_cast<size_t>(a)]) {
      in[static_cast<size_t>(a)] = 1;
      chosen.push_back(a);
    }
  };
  const int cells = ctx.grid().num_cells();
  if (kind == NeighborhoodKind::Congestion && size > 0) {
    std::vector<std::vector<int>> visitors(static_cast<size_t>(cells));
    for (int a : pool) {
      int last = -1;
      for (StateId s : sol.paths[static_cast<size_t>(a)].states) {
        const int c = state_cell(s);
        if (c != last) {
          auto& v = visitors[static_cast<size_t>(c)];
          if (v.empty() || v.back() != a) v.push_back(a);
        }
        last = c;
      }
    }
    int64_t total = 0;
    for (const auto& v : visitors)
      if (v.size() >= 2) total += static_cast<int64_t>(v.size());
    if (total > 0) {
      int64_t pick = uniform_int(rng, 0, total - 1);
      int cell = 0;
      for (; cell < cells; ++cell) {
        const auto& v = visitors[static_cast<size_t>(cell)];
        if (v.size() < 2) continue;
        if (pick < static_cast<int64_t>(v.size())) break;
        pick -= static_cast<int64_t>(v.size());
      }
      auto v = visitors[static_cast<size_t>(cell)];
      shuffle(v, rng);
      for (int a : v) take(a);
    }
  } else if (kind == NeighborhoodKind::Delay && size > 0) {
    int worst = -1, worst_delay = -1;
    for (int a : pool) {
      const int delay = sol.paths[static_cast<size_t>(a)].arrival() - (1 + ctx.free_flow(a));
      if (delay > worst_delay) {
        worst = a;
        worst_delay = delay;
      }
    }
    take(worst);
    std::vector<uint8_t> on_path(static_cast<size_t>(cells), 0);
    for (StateId s : sol.paths[static_cast<size_t>(worst)].states) on_path[static_cast<size_t>(state_cell(s))] = 1;
    std::vector<int> partners;
    for (int a : pool) {
      if (a == worst) continue;
      for (StateId s : sol.paths[static_cast<size_t>(a)].states)
        if (on_path[static_cast<size_t>(state_cell(s))]) {
          partners.push_back(a);
          break;
        }
    }
    shuffle(partners, rng);
    for (int a : partners) take(a);
  }
  detail::fill_random(chosen, in, pool, size, rng);
  return chosen;
}

namespace detail {

struct LnsCandidate {
  Solution solution;
  int64_t cost = INT64_MAX;
  NeighborhoodKind kind = NeighborhoodKind::Random;
  bool improved = false;
};

inline NeighborhoodKind roulette(const std::array<double, 3>& w, Rng& rng) {
  const double total = w[0] + w[1] + w[2];
  double u = uniform01(rng) * total;
  for (int k = 0; k < 3; ++k) {
    if (u < w[static_cast<size_t>(k)]) return static_cast<NeighborhoodKind>(k);
    u -= w[static_cast<size_t>(k)];
  }
  return NeighborhoodKind::Delay;
}

inline LnsCandidate lns_iteration(const PlanningContext& ctx, const Solution& best, int64_t best_cost,
                                  const SolverConfig& cfg, const std::array<double, 3>& weights, uint64_t seed) {
  Rng rng(seed);
  LnsCandidate c;
  c.kind = roulette(weights, rng);
  auto group = select_neighborhood(ctx, best, rng, static_cast<size_t>(std::max(1, cfg.neighborhood_size)), c.kind);
  std::vector<uint8_t> skip(best.paths.size(), 0);
  for (int a : group) skip[static_cast<size_t>(a)] = 1;
  SafeIntervalTable table = table_from(ctx, best, skip);
  shuffle(group, rng);
  std::vector<PlanRequest> reqs;
  for (int a : group) {
    const TimedPath& old = best.paths[static_cast<size_t>(a)];
    PlanRequest r = ctx.departure(a);
    if (!old.starts_off_grid) {
      r.off_grid = false;
      r.start = old.states.front();
      r.start_time = old.start_time;
    }
    reqs.push_back(r);
  }
  PlanResult res = prioritized_plan(ctx, reqs, table);
  if (!res.failed.empty()) return c;
  Solution next = best;
  for (int a : group) next.paths[static_cast<size_t>(a)] = res.solution.paths[static_cast<size_t>(a)];
  c.cost = next.cost();
  c.improved = c.cost < best_cost;
  c.solution = std::move(next);
  return c;
}

}  // namespace detail

/// Destroy-and-replan improvement. Each round every worker runs one iteration
/// from the current best; the cheapest strictly improving candidate (lowest
/// worker on ties) is adopted. Output is a pure function of the inputs and the
/// number of completed rounds.
inline Solution lns_improve(const PlanningContext& ctx, Solution solution, const SolverConfig& cfg,
                            Clock::time_point deadline, LnsStats* stats = nullptr) {
  LnsStats local;
  LnsStats& st = stats ? *stats : local;
  int64_t best_cost = solution.cost();
  st.cost_trajectory.push_back(best_cost);
  if (solution.num_planned() == 0) return solution;
  const int workers = std::max(1, cfg.workers);
  int round = 0;
  while (st.iterations < cfg.max_iterations && Clock::now() < deadline) {
    const int batch = std::min(workers, cfg.max_iterations - st.iterations);
    std::vector<detail::LnsCandidate> results(static_cast<size_t>(batch));
    auto run = [&](int w) {
      results[static_cast<size_t>(w)] = detail::lns_iteration(
          ctx, solution, best_cost, cfg, st.weights,
          mix_seed(cfg.seed, static_cast<uint64_t>(round) * 1024 + static_cast<uint64_t>(w)));
    };
    if (batch == 1) {
      run(0);
    } else {
      std::vector<std::thread> threads;
      for (int w = 1; w < batch; ++w) threads.emplace_back(run, w);
      run(0);
      for (auto& t : threads) t.join();
    }
    int pick = -1;
    for (int w = 0; w < batch; ++w) {
      const auto& r = results[static_cast<size_t>(w)];
      const size_t k = static_cast<size_t>(r.kind);
      st.weights[k] = std::max(cfg.min_weight, (1 - cfg.reaction) * st.weights[k] + cfg.reaction * (r.improved ? 1.0 : 0.0));
      if (r.improved && (pick < 0 || r.cost < results[static_cast<size_t>(pick)].cost)) pick = w;
    }
    if (pick >= 0) {
      solution = std::move(results[static_cast<size_t>(pick)].solution);
      best_cost = results[static_cast<size_t>(pick)].cost;
      ++st.adopted;
    }
    for (int w = 0; w < batch; ++w) st.cost_trajectory.push_back(best_cost);
    st.iterations += batch;
    ++round;
  }
  return solution;
}

// ---------------------------------------------------------------------------
// Iteration budget

struct BudgetState {
  double total_s = 0;        // overall improvement budget at the start
  double remaining_s = 0;    // wall clock still available
  int envs_left = 1;         // environments including the current one
  std::vector<double> iteration_cost_s;  // observed seconds per LNS iteration
};

/// Iteration limit for the next environment. The fair share of the remaining
/// time is scaled by an annealed factor that shrinks as the budget is consumed,
/// then divided by the mean observed iteration cost.
inline int budget_policy(const BudgetState& b, const SolverConfig& cfg = {}) {
  if (b.remaining_s <= 0 || b.envs_left <= 0) return 0;
  double per_iter = cfg.default_iteration_cost_s;
  if (!b.iteration_cost_s.empty())
    per_iter = std::accumulate(b.iteration_cost_s.begin(), b.iteration_cost_s.end(), 0.0) /
               static_cast<double>(b.iteration_cost_s.size());
  if (per_iter <= 0) return 0;
  const double used = b.total_s > 0 ? std::clamp(1.0 - b.remaining_s / b.total_s, 0.0, 1.0) : 0.0;
  const double share = cfg.anneal_share * std::exp(-cfg.anneal_cooling * used);
  const double seconds = share * b.remaining_s / b.envs_left;
  return static_cast<int>(std::floor(seconds / per_iter));
}

// ---------------------------------------------------------------------------
// Lazy planning

struct LazySplit {
  std::vector<int> plan_now;
  std::vector<int> deferred;
};

/// The `threshold` agents with the shortest free-flow distance are planned now
/// (ties by id); the rest keep that order for planning during execution.
inline LazySplit lazy_partition(const PlanningContext& ctx, const std::vector<int>& agents, int threshold) {
  auto order = priority_order(ctx, agents, OrderingRule::ShortestFirst);
  LazySplit s;
  const size_t k = static_cast<size_t>(std::max(0, threshold));
  for (size_t i = 0; i < order.size(); ++i) (i < k ? s.plan_now : s.deferred).push_back(order[i]);
  return s;
}

}  // namespace railmapf
