#pragma once

// Difficulty schedule (41 tests x 10 environments) and procedural rail layouts.
//
// Layout: every city is a rectangular ring whose two horizontal sides hold the
// station tracks. Inter-city corridors attach to the middle of a ring side
// through a junction made of two simple switches on the ring and a symmetric
// switch one cell outside it, so trains arriving from a corridor may turn
// either way and trains circulating in either direction may leave. Rings make
// every track cell part of a directed cycle; corridors are single-track and
// may cross each other on diamond crossings.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "railmapf/rail_core.hpp"
#include "railmapf/rng.hpp"
#include "railmapf/sim_engine.hpp"

namespace railmapf {

inline constexpr int kNumTests = 41;
inline constexpr int kEnvsPerTest = 10;
inline constexpr int kMinMalfunctionInterval = 250;
inline constexpr int kMaxRailsInCity = 4;
inline constexpr int kMaxRailsBetweenCities = 2;

struct TestParams {
  int test = 0;
  int env = 0;
  int n_agents = 1;
  int n_cities = 2;
  int x_dim = 25;
  int y_dim = 25;
  int malfunction_interval = 0;  // 0: no malfunctions
  int max_rails_in_city = kMaxRailsInCity;
  int max_rails_between_cities = kMaxRailsBetweenCities;
  int min_malfunction_duration = 20;
  int max_malfunction_duration = 50;

  double malfunction_rate() const { return malfunction_interval == 0 ? 0.0 : 1.0 / malfunction_interval; }
  int t_max() const { return static_cast<int>(compute_t_max(x_dim, y_dim, n_agents, n_cities)); }
  bool operator==(const TestParams&) const = default;
};

namespace detail {

inline int64_t pow10(int p) {
  int64_t v = 1;
  while (p-- > 0) v *= 10;
  return v;
}

inline int floor_log10(int64_t n) {
  int p = 0;
  while (n >= 10) {
    n /= 10;
    ++p;
  }
  return p;
}

/// Smallest r with r*r >= v.
inline int64_t ceil_sqrt(int64_t v) {
  auto r = static_cast<int64_t>(std::sqrt(static_cast<double>(v)));
  while (r * r < v) ++r;
  while (r > 0 && (r - 1) * (r - 1) >= v) --r;
  return r;
}

}  // namespace detail

/// n_{k+1} = n_k + ceil(0.75 * 10^floor(log10 n_k)), n_0 = 1.
inline int agents_for_test(int k) {
  if (k < 0 || k >= kNumTests) throw std::out_of_range("test index must lie in [0, 40]");
  int64_t n = 1;
  for (int i = 0; i < k; ++i) n += (3 * detail::pow10(detail::floor_log10(n)) + 3) / 4;
  return static_cast<int>(n);
}

/// 0 for l = 0, else 1 / (l * 250).
inline double malfunction_rate(int l) {
  if (l < 0 || l >= kEnvsPerTest) throw std::out_of_range("env index must lie in [0, 9]");
  return l == 0 ? 0.0 : 1.0 / (l * kMinMalfunctionInterval);
}

/// Parameters of test k, environment l.
inline TestParams schedule(int k, int l = 0) {
  if (l < 0 || l >= kEnvsPerTest) throw std::out_of_range("env index must lie in [0, 9]");
  TestParams p;
  p.test = k;
  p.env = l;
  p.n_agents = agents_for_test(k);
  p.n_cities = p.n_agents / 10 + 2;
  const int64_t half_rails = (p.max_rails_in_city + 1) / 2;
  p.x_dim = static_cast<int>(detail::ceil_sqrt(6 * (half_rails + 3) * (half_rails + 3) * p.n_cities) + 7);
  p.y_dim = p.x_dim;
  p.malfunction_interval = l * kMinMalfunctionInterval;
  return p;
}

inline std::vector<TestParams> full_schedule() {
  std::vector<TestParams> out;
  out.reserve(kNumTests * kEnvsPerTest);
  for (int k = 0; k < kNumTests; ++k)
    for (int l = 0; l < kEnvsPerTest; ++l) out.push_back(schedule(k, l));
  return out;
}

struct GenConfig {
  uint64_t seed = 0;
  int stations_per_city = 0;  // 0: every station cell may be used
  int max_retries = 64;
  bool extra_connections = true;
};

class GenerationError : public std::runtime_error {
 public:
  GenerationError(uint64_t seed, int test, const std::string& why)
      : std::runtime_error("generation failed for test " + std::to_string(test) + " seed " + std::to_string(seed) +
                           ": " + why),
        seed_(seed),
        test_(test) {}
  uint64_t seed() const { return seed_; }
  int test() const { return test_; }

 private:
  uint64_t seed_;
  int test_;
};

struct City {
  int top = 0, left = 0, bottom = 0, right = 0;  // ring bounds (inclusive)
  std::vector<Cell> stations;
  bool operator==(const City&) const = default;
};

struct Environment {
  std::shared_ptr<const RailGrid> grid;
  std::vector<AgentSpec> agents;
  std::vector<City> cities;
  int n_cities = 0;
  MalfunctionParams malfunction;
  int test = -1;
  int env = -1;
  uint64_t seed = 0;

  int t_max() const {
    return static_cast<int>(compute_t_max(grid->width(), grid->height(), static_cast<int64_t>(agents.size()),
                                          std::max(n_cities, 1)));
  }

  EpisodeSetup episode(uint64_t sim_seed) const {
    EpisodeSetup s;
    s.grid = grid;
    s.agents = agents;
    s.malfunction = malfunction;
    s.seed = sim_seed;
    s.t_max = t_max();
    s.n_cities = n_cities;
    s.test = test;
    s.env = env;
    return s;
  }
};

namespace detail {

struct Junction {
  int city = 0;
  Direction outward = Direction::N;
  Cell mid;  // ring cell at the middle of the side
  Cell port() const { return step(step(mid, outward), outward); }
};

class LayoutBuilder {
 public:
  LayoutBuilder(const TestParams& params, uint64_t seed)
      : params_(params), rng_(seed), builder_(params.x_dim, params.y_dim),
        blocked_(static_cast<size_t>(params.x_dim) * static_cast<size_t>(params.y_dim), 0) {}

  std::optional<std::string> run(bool extra_connections) {
    if (auto err = place_cities()) return err;
    plan_connections(extra_connections);
    for (const Connection& c : connections_) {
      const Cell pa = junctions_[static_cast<size_t>(c.a)].port(), pb = junctions_[static_cast<size_t>(c.b)].port();
      reserved_port_[static_cast<size_t>(grid().index(pa))] = 1;
      reserved_port_[static_cast<size_t>(grid().index(pb))] = 1;
    }
    for (const Connection& c : connections_) {
      const bool ok = route(junctions_[static_cast<size_t>(c.a)], junctions_[static_cast<size_t>(c.b)]);
      if (!ok && c.required) return "could not route corridor between cities";
      if (ok) {
        build_junction(junctions_[static_cast<size_t>(c.a)]);
        build_junction(junctions_[static_cast<size_t>(c.b)]);
      }
    }
    collect_stations();
    return std::nullopt;
  }

  const RailGrid& grid() const { return builder_.grid(); }
  std::vector<City>& cities() { return cities_; }
  Rng& rng() { return rng_; }

 private:
  struct Connection {
    int a, b;  // junction indices
    bool required;
  };

  std::optional<std::string> place_cities() {
    const int nc = params_.n_cities;
    const int lattice = static_cast<int>(ceil_sqrt(nc));
    const int slot_w = params_.x_dim / lattice, slot_h = params_.y_dim / lattice;
    // box = ring plus one junction row on every side; ports sit one further out.
    const int max_w = std::min(9, slot_w - 4), max_h = std::min(7, slot_h - 4);
    if (max_w < 5 || max_h < 5) return "grid too small for the requested number of cities";
    std::vector<int> slots(static_cast<size_t>(lattice * lattice));
    for (size_t i = 0; i < slots.size(); ++i) slots[i] = static_cast<int>(i);
    shuffle(slots, rng_);
    slots.resize(static_cast<size_t>(nc));
    std::sort(slots.begin(), slots.end());
    side_used_.assign(static_cast<size_t>(nc), {});
    for (int slot : slots) {
      const int sr = (slot / lattice) * slot_h, sc = (slot % lattice) * slot_w;
      const int w = static_cast<int>(uniform_int(rng_, std::min(7, max_w), max_w));
      const int h = static_cast<int>(uniform_int(rng_, 5, std::min(5 + (max_h - 5) / 2 * 2, max_h)));
      const int br = static_cast<int>(uniform_int(rng_, sr + 1, sr + slot_h - h - 3));
      const int bc = static_cast<int>(uniform_int(rng_, sc + 1, sc + slot_w - w - 3));
      City city{br + 1, bc + 1, br + h, bc + w, {}};
      builder_.ring(city.top, city.left, city.bottom, city.right);
      for (int r = br; r <= br + h + 1; ++r)
        for (int c = bc; c <= bc + w + 1; ++c) blocked_[static_cast<size_t>(grid().index({r, c}))] = 1;
      cities_.push_back(city);
    }
    reserved_port_.assign(blocked_.size(), 0);
    return std::nullopt;
  }

  static Cell center(const City& c) { return {(c.top + c.bottom) / 2, (c.left + c.right) / 2}; }

  static Cell side_mid(const City& c, Direction side) {
    switch (side) {
      case Direction::N: return {c.top, c.left + (c.right - c.left + 1) / 2};
      case Direction::S: return {c.bottom, c.left + (c.right - c.left + 1) / 2};
      case Direction::W: return {c.top + (c.bottom - c.top + 1) / 2, c.left};
      case Direction::E: return {c.top + (c.bottom - c.top + 1) / 2, c.right};
    }
    return {};
  }

  std::optional<int> claim_side(int city, Cell toward) {
    const Cell me = center(cities_[static_cast<size_t>(city)]);
    const int dr = toward.row - me.row, dc = toward.col - me.col;
    std::vector<Direction> prefs;
    const Direction vert = dr < 0 ? Direction::N : Direction::S;
    const Direction horz = dc < 0 ? Direction::W : Direction::E;
    if (std::abs(dr) >= std::abs(dc)) prefs = {vert, horz, opposite(horz), opposite(vert)};
    else prefs = {horz, vert, opposite(vert), opposite(horz)};
    for (Direction d : prefs) {
      auto& used = side_used_[static_cast<size_t>(city)];
      if (used[static_cast<size_t>(to_int(d))]) continue;
      const Cell port = step(step(side_mid(cities_[static_cast<size_t>(city)], d), d), d);
      if (!grid().in_bounds(port)) continue;
      used[static_cast<size_t>(to_int(d))] = true;
      junctions_.push_back({city, d, side_mid(cities_[static_cast<size_t>(city)], d)});
      return static_cast<int>(junctions_.size()) - 1;
    }
    return std::nullopt;
  }

  void plan_connections(bool extra) {
    const int nc = static_cast<int>(cities_.size());
    auto dist = [&](int a, int b) {
      const Cell ca = center(cities_[static_cast<size_t>(a)]), cb = center(cities_[static_cast<size_t>(b)]);
      return std::abs(ca.row - cb.row) + std::abs(ca.col - cb.col);
    };
    std::vector<uint8_t> in_tree(static_cast<size_t>(nc), 0);
    std::vector<std::vector<int>> pair_count(static_cast<size_t>(nc), std::vector<int>(static_cast<size_t>(nc), 0));
    in_tree[0] = 1;
    for (int added = 1; added < nc; ++added) {
      int best_a = -1, best_b = -1, best_d = 0;
      for (int a = 0; a < nc; ++a) {
        if (!in_tree[static_cast<size_t>(a)] || free_sides(a) == 0) continue;
        for (int b = 0; b < nc; ++b) {
          if (in_tree[static_cast<size_t>(b)]) continue;
          const int d = dist(a, b);
          if (best_a < 0 || d < best_d) {
            best_a = a;
            best_b = b;
            best_d = d;
          }
        }
      }
      if (best_a < 0) break;
      add_connection(best_a, best_b, true);
      in_tree[static_cast<size_t>(best_b)] = 1;
      ++pair_count[static_cast<size_t>(best_a)][static_cast<size_t>(best_b)];
      ++pair_count[static_cast<size_t>(best_b)][static_cast<size_t>(best_a)];
    }
    if (!extra) return;
    const int extras = std::max(1, nc / 2);
    for (int e = 0; e < extras; ++e) {
      const int a = static_cast<int>(uniform_int(rng_, 0, nc - 1));
      int best_b = -1, best_d = 0;
      for (int b = 0; b < nc; ++b) {
        if (b == a || pair_count[static_cast<size_t>(a)][static_cast<size_t>(b)] >= params_.max_rails_between_cities)
          continue;
        const int d = dist(a, b);
        if (best_b < 0 || d < best_d) {
          best_b = b;
          best_d = d;
        }
      }
      if (best_b < 0 || free_sides(a) == 0 || free_sides(best_b) == 0) continue;
      if (add_connection(a, best_b, false)) {
        ++pair_count[static_cast<size_t>(a)][static_cast<size_t>(best_b)];
        ++pair_count[static_cast<size_t>(best_b)][static_cast<size_t>(a)];
      }
    }
  }

  int free_sides(int city) const {
    int n = 0;
    for (bool u : side_used_[static_cast<size_t>(city)]) n += u ? 0 : 1;
    return n;
  }

  bool add_connection(int a, int b, bool required) {
    const auto ja = claim_side(a, center(cities_[static_cast<size_t>(b)]));
    if (!ja) return false;
    const auto jb = claim_side(b, center(cities_[static_cast<size_t>(a)]));
    if (!jb) return false;
    connections_.push_back({*ja, *jb, required});
    return true;
  }

  static bool is_straight_along(TransitionCode code, Direction heading) {
    const TransitionCode straight = TransitionCode{}.with_link(heading, opposite(heading));
    return code == straight;
  }

  bool route(const Junction& from, const Junction& to) {
    const RailGrid& g = grid();
    const Cell start = from.port(), goal = to.port();
    const int n_states = g.num_cells() * 4;
    constexpr int kInf = std::numeric_limits<int>::max();
    std::vector<int> cost(static_cast<size_t>(n_states), kInf), parent(static_cast<size_t>(n_states), -1);
    using Item = std::pair<int, StateId>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
    const int goal_idx = g.index(goal);
    auto enterable = [&](int idx, Direction heading) -> int {  // extra cost, or -1
      if (blocked_[static_cast<size_t>(idx)]) return -1;
      if (reserved_port_[static_cast<size_t>(idx)] && idx != goal_idx) return -1;
      const TransitionCode code = g.at(idx);
      if (!code.is_rail()) return 0;
      if (idx == goal_idx) return -1;
      return is_straight_along(code, turn_left(heading)) ? 4 : -1;
    };
    if (g.at(start).is_rail() || g.at(goal).is_rail()) return false;
    const StateId s0 = make_state(g.index(start), from.outward);
    cost[static_cast<size_t>(s0)] = 0;
    open.push({0, s0});
    StateId found = -1;
    while (!open.empty()) {
      const auto [c, s] = open.top();
      open.pop();
      if (c != cost[static_cast<size_t>(s)]) continue;
      const int cell = state_cell(s);
      const Direction h = state_heading(s);
      if (cell == goal_idx && h != to.outward) {
        found = s;
        break;
      }
      const bool crossing = g.at(cell).is_rail() && cell != g.index(start);
      for (Direction nh : {h, turn_left(h), turn_right(h)}) {
        if (crossing && nh != h) continue;
        if (cell == goal_idx) continue;
        const auto nb = g.neighbor(cell, nh);
        if (!nb) continue;
        const int extra = enterable(*nb, nh);
        if (extra < 0) continue;
        const StateId ns = make_state(*nb, nh);
        const int nc = c + 1 + (nh != h ? 1 : 0) + extra;
        if (nc < cost[static_cast<size_t>(ns)]) {
          cost[static_cast<size_t>(ns)] = nc;
          parent[static_cast<size_t>(ns)] = s;
          open.push({nc, ns});
        }
      }
    }
    if (found < 0) return false;
    std::vector<StateId> path;
    for (StateId s = found; s >= 0; s = parent[static_cast<size_t>(s)]) path.push_back(s);
    std::reverse(path.begin(), path.end());
    std::vector<int> cells;
    for (StateId s : path) cells.push_back(state_cell(s));
    auto sorted = cells;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) return false;
    for (size_t i = 0; i < path.size(); ++i) {
      const Direction in = state_heading(path[i]);
      const Direction out = i + 1 < path.size() ? state_heading(path[i + 1]) : opposite(to.outward);
      builder_.link(g.cell(cells[i]), opposite(in), out);
    }
    return true;
  }

  void build_junction(const Junction& j) {
    if (j.city < 0) return;
    const Direction o = j.outward, u = turn_right(o), v = turn_left(o);
    const Cell xu = step(j.mid, u), xv = step(j.mid, v);
    const Cell cu = step(xu, o), cv = step(xv, o), y = step(j.mid, o);
    builder_.link(xu, o, u);
    builder_.link(xv, o, v);
    builder_.link(cu, opposite(o), v);
    builder_.link(cv, opposite(o), u);
    builder_.link(y, o, u);
    builder_.link(y, o, v);
    junction_cells_.push_back(xu);
    junction_cells_.push_back(xv);
    junction_cells_.push_back(j.mid);
  }

  void collect_stations() {
    for (City& city : cities_) {
      for (int row : {city.top, city.bottom})
        for (int c = city.left + 1; c < city.right; ++c) {
          const Cell cell{row, c};
          if (std::find(junction_cells_.begin(), junction_cells_.end(), cell) != junction_cells_.end()) continue;
          if (grid().at(cell).total_transitions() != 2) continue;
          city.stations.push_back(cell);
        }
    }
  }

  TestParams params_;
  Rng rng_;
  RailBuilder builder_;
  std::vector<uint8_t> blocked_;
  std::vector<uint8_t> reserved_port_;
  std::vector<City> cities_;
  std::vector<std::array<bool, 4>> side_used_;
  std::vector<Junction> junctions_;
  std::vector<Connection> connections_;
  std::vector<Cell> junction_cells_;
};

}  // namespace detail

/// Builds a validated grid with n_cities rings and n_agents specs. A pure
/// function of (params, config); retries use sub-seeds of config.seed.
inline Environment generate(const TestParams& params, const GenConfig& config) {
  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt < std::max(1, config.max_retries); ++attempt) {
    detail::LayoutBuilder layout(params, mix_seed(config.seed, static_cast<uint64_t>(attempt)));
    if (auto err = layout.run(config.extra_connections)) {
      last_error = *err;
      if (last_error.rfind("grid too small", 0) == 0) break;
      continue;
    }
    const RailGrid& grid = layout.grid();
    if (!validate_grid(grid).ok()) {
      last_error = "layout failed validation";
      continue;
    }
    auto& cities = layout.cities();
    if (config.stations_per_city > 0)
      for (City& c : cities)
        if (static_cast<int>(c.stations.size()) > config.stations_per_city)
          c.stations.resize(static_cast<size_t>(config.stations_per_city));
    if (std::any_of(cities.begin(), cities.end(), [](const City& c) { return c.stations.empty(); })) {
      last_error = "city without station cells";
      continue;
    }
    Environment env;
    env.grid = std::make_shared<const RailGrid>(grid);
    env.cities = cities;
    env.n_cities = params.n_cities;
    env.test = params.test;
    env.env = params.env;
    env.seed = config.seed;
    env.malfunction.rate = params.malfunction_rate();
    env.malfunction.min_duration = params.min_malfunction_duration;
    env.malfunction.max_duration = params.max_malfunction_duration;
    Rng& rng = layout.rng();
    const int nc = static_cast<int>(cities.size());
    std::vector<size_t> next_origin(static_cast<size_t>(nc), 0), next_target(static_cast<size_t>(nc), 0);
    bool ok = true;
    for (int i = 0; i < params.n_agents && ok; ++i) {
      const int a = static_cast<int>(uniform_int(rng, 0, nc - 1));
      int b = static_cast<int>(uniform_int(rng, 0, nc - 2));
      if (b >= a) ++b;
      const City& ca = cities[static_cast<size_t>(a)];
      const City& cb = cities[static_cast<size_t>(b)];
      AgentSpec spec;
      spec.origin = ca.stations[next_origin[static_cast<size_t>(a)]++ % ca.stations.size()];
      spec.target = cb.stations[next_target[static_cast<size_t>(b)]++ % cb.stations.size()];
      spec.direction = uniform_int(rng, 0, 1) == 0 ? Direction::E : Direction::W;
      ok = reachable(grid, spec.origin, spec.direction, spec.target);
      env.agents.push_back(spec);
    }
    if (!ok) {
      last_error = "unreachable target";
      continue;
    }
    return env;
  }
  throw GenerationError(config.seed, params.test, last_error);
}

// ---------------------------------------------------------------------------
// Environment files: {"grid": ..., "agents": [...], "n_cities", "malfunction", "test", "env", "seed"}

inline nlohmann::json environment_to_json(const Environment& env) {
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& a : env.agents) agents.push_back(agent_spec_to_json(a));
  nlohmann::json cities = nlohmann::json::array();
  for (const auto& c : env.cities) {
    nlohmann::json st = nlohmann::json::array();
    for (Cell s : c.stations) st.push_back(cell_to_json(s));
    cities.push_back({{"ring", {c.top, c.left, c.bottom, c.right}}, {"stations", st}});
  }
  return {{"grid", grid_to_json(*env.grid)},
          {"agents", agents},
          {"cities", cities},
          {"n_cities", env.n_cities},
          {"malfunction", malfunction_to_json(env.malfunction)},
          {"test", env.test},
          {"env", env.env},
          {"seed", env.seed}};
}

inline Environment environment_from_json(const nlohmann::json& j) {
  Environment env;
  env.grid = std::make_shared<const RailGrid>(grid_from_json(j.at("grid")));
  for (const auto& a : j.at("agents")) env.agents.push_back(agent_spec_from_json(a));
  if (j.contains("cities"))
    for (const auto& c : j.at("cities")) {
      City city;
      const auto& r = c.at("ring");
      city.top = r.at(0).get<int>();
      city.left = r.at(1).get<int>();
      city.bottom = r.at(2).get<int>();
      city.right = r.at(3).get<int>();
      for (const auto& s : c.at("stations")) city.stations.push_back(cell_from_json(s));
      env.cities.push_back(std::move(city));
    }
  env.n_cities = j.value("n_cities", static_cast<int>(env.cities.size()));
  if (j.contains("malfunction")) env.malfunction = malfunction_from_json(j.at("malfunction"));
  env.test = j.value("test", -1);
  env.env = j.value("env", -1);
  env.seed = j.value("seed", uint64_t{0});
  return env;
}

}  // namespace railmapf
