#include <fstream>
#include <iostream>
#include <regex>

#include "CLI11.hpp"
#include "json.hpp"

#include "railmapf/railmapf.hpp"

using namespace railmapf;
using nlohmann::json;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

json params_to_json(const TestParams& p) {
  return {{"test", p.test},
          {"env", p.env},
          {"n_agents", p.n_agents},
          {"n_cities", p.n_cities},
          {"x_dim", p.x_dim},
          {"y_dim", p.y_dim},
          {"malfunction_interval", p.malfunction_interval},
          {"malfunction_rate", p.malfunction_rate()},
          {"max_rails_in_city", p.max_rails_in_city},
          {"max_rails_between_cities", p.max_rails_between_cities},
          {"t_max", p.t_max()}};
}

OrderingRule ordering_from(const std::string& s) {
  if (s == "shortest-first") return OrderingRule::ShortestFirst;
  if (s == "longest-first") return OrderingRule::LongestFirst;
  if (s == "by-id") return OrderingRule::ById;
  throw std::invalid_argument("unknown ordering: " + s);
}

SolverConfig solver_from_json(const json& j) {
  SolverConfig c;
  c.ordering = ordering_from(j.value("ordering", std::string("shortest-first")));
  c.neighborhood_size = j.value("neighborhood_size", c.neighborhood_size);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.time_budget_s = j.value("time_budget_s", c.time_budget_s);
  c.workers = j.value("workers", c.workers);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::pair<int, int> parse_range(const std::string& s) {
  static const std::regex re(R"((\d+)(?:\.\.(\d+))?)");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw std::invalid_argument("expected K or A..B, got " + s);
  const int a = std::stoi(m[1]);
  const int b = m[2].matched ? std::stoi(m[2]) : a;
  if (b < a || b >= kNumTests) throw std::invalid_argument("test range out of bounds: " + s);
  return {a, b};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"railmapf: rail-network multi-agent planning toolkit"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate an environment, or print the test schedule");
  int g_test = 0, g_env = 0;
  uint64_t g_seed = 0;
  std::string g_out;
  bool g_schedule = false;
  gen->add_option("--test", g_test, "test index")->check(CLI::Range(0, kNumTests - 1));
  gen->add_option("--env", g_env, "environment index")->check(CLI::Range(0, kEnvsPerTest - 1));
  gen->add_option("--seed", g_seed, "generation seed");
  gen->add_option("--out", g_out, "output file (default stdout)");
  gen->add_flag("--schedule", g_schedule, "print all test parameters instead");

  // solve
  auto* solve = app.add_subcommand("solve", "plan an environment offline");
  std::string s_env, s_config, s_out;
  solve->add_option("--env", s_env, "environment JSON")->required();
  solve->add_option("--config", s_config, "solver config JSON");
  solve->add_option("--out", s_out, "plan JSON")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a controller over the schedule");
  std::string e_ctl, e_tests = "0..7", e_seeds, e_limits, e_report, e_traces;
  int e_envs = kEnvsPerTest;
  bool e_competition = false, e_no_clock = false;
  ev->add_option("--controller", e_ctl, "pp-sipp-mcp | lns-mcp | masked-heuristic | external:<cmd>")->required();
  ev->add_option("--tests", e_tests, "test range A..B");
  ev->add_option("--envs", e_envs, "environments per test")->check(CLI::Range(1, kEnvsPerTest));
  ev->add_option("--seeds", e_seeds, "seed list JSON");
  ev->add_option("--limits", e_limits, "limits JSON (overrides the profile)");
  ev->add_option("--report", e_report, "report JSON")->required();
  ev->add_option("--traces", e_traces, "directory for per-environment traces");
  ev->add_flag("--competition", e_competition, "competition limits instead of the desk profile");
  ev->add_flag("--no-wall-clock", e_no_clock, "omit wall-clock fields from the report");

  // replay-stats
  auto* rs = app.add_subcommand("replay-stats", "statistics over trace files");
  std::string r_in, r_plot;
  rs->add_option("--in", r_in, "directory of .jsonl traces")->required()->check(CLI::ExistingDirectory);
  rs->add_option("--plot", r_plot, "output directory for summary, CSV and SVG");

  // run
  auto* run = app.add_subcommand("run", "run one controller on one environment");
  std::string u_env, u_ctl = "pp-sipp-mcp", u_trace;
  uint64_t u_seed = 0;
  run->add_option("--env", u_env, "environment JSON")->required();
  run->add_option("--controller", u_ctl, "controller name");
  run->add_option("--seed", u_seed, "simulation seed");
  run->add_option("--trace", u_trace, "trace output (JSON lines)");

  // dot
  auto* dot = app.add_subcommand("dot", "export the directed rail graph");
  std::string d_env, d_out;
  bool d_condensed = false;
  dot->add_option("--env", d_env, "environment JSON")->required();
  dot->add_option("--out", d_out, "DOT file (default stdout)");
  dot->add_flag("--condensed", d_condensed, "collapse corridors");

  // observe
  auto* obs = app.add_subcommand("observe", "dump per-step observations while a controller runs");
  std::string o_env, o_ctl = "masked-heuristic", o_out, o_features = "standard-7";
  int o_depth = 2;
  uint64_t o_seed = 0;
  obs->add_option("--env", o_env, "environment JSON")->required();
  obs->add_option("--controller", o_ctl, "controller name");
  obs->add_option("--out", o_out, "JSON lines output")->required();
  obs->add_option("--depth", o_depth, "tree depth")->check(CLI::Range(1, 3));
  obs->add_option("--features", o_features, "minimal-4 | standard-7 | rich-11");
  obs->add_option("--seed", o_seed, "simulation seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      if (g_schedule) {
        json all = json::array();
        for (const TestParams& p : full_schedule()) all.push_back(params_to_json(p));
        write_text(g_out, all.dump(2) + "\n");
      } else {
        const Environment env = generate(schedule(g_test, g_env), GenConfig{g_seed});
        write_text(g_out, environment_to_json(env).dump() + "\n");
      }
    } else if (*solve) {
      const Environment env = environment_from_json(read_json(s_env));
      const json cfg = s_config.empty() ? json::object() : read_json(s_config);
      const SolverConfig sc = solver_from_json(cfg);
      PlanningContext ctx(env.grid, env.agents, env.t_max());
      PlanResult pr = prioritized_plan(ctx, priority_order(ctx, all_agents(ctx), sc.ordering));
      LnsStats stats;
      Solution sol = std::move(pr.solution);
      if (cfg.value("lns", false)) sol = lns_improve(ctx, std::move(sol), sc, after(sc.time_budget_s), &stats);
      json out = solution_to_json(*env.grid, sol);
      out["cost"] = sol.cost();
      out["failed"] = pr.failed;
      if (!stats.cost_trajectory.empty()) out["lns_iterations"] = stats.iterations;
      write_text(s_out, out.dump() + "\n");
      std::cerr << "planned " << sol.num_planned() << "/" << ctx.num_agents() << " agents, cost " << sol.cost() << "\n";
    } else if (*ev) {
      EvalSpec spec;
      std::tie(spec.first_test, spec.last_test) = parse_range(e_tests);
      spec.envs_per_test = e_envs;
      if (!e_seeds.empty()) spec.seeds = seeds_from_json(read_json(e_seeds));
      spec.limits = e_competition ? Limits{} : Limits::desk();
      if (!e_limits.empty()) spec.limits = limits_from_json(read_json(e_limits), spec.limits);
      if (e_no_clock) spec.limits.record_wall_clock = false;
      spec.trace_dir = e_traces;
      const EvalReport report = run_evaluation(controller_factory(e_ctl), spec);
      json j = report_to_json(report, spec.limits.record_wall_clock);
      j["limits"] = limits_to_json(spec.limits);
      write_text(e_report, j.dump(2) + "\n");
      std::cerr << report.controller << ": " << report.envs.size() << " environments, total score " << report.total()
                << ", termination " << to_string(report.termination) << "\n";
    } else if (*rs) {
      const ReplayStats stats = replay_stats(trace_files(r_in));
      if (!r_plot.empty()) write_replay_outputs(stats, r_plot);
      else std::cout << replay_stats_to_json(stats).dump(2) << "\n";
      for (const TraceStats& f : stats.files)
        if (!f.error.empty()) std::cerr << f.path << ": " << f.error << "\n";
    } else if (*run) {
      const Environment env = environment_from_json(read_json(u_env));
      const EpisodeRun r = run_episode(env, controller_factory(u_ctl), Limits::desk(), u_seed);
      if (!u_trace.empty()) write_trace(r.trace, u_trace);
      std::cout << "score " << r.result.score << " done " << r.result.done << "/" << r.result.n_agents << "\n";
      if (r.result.crashed || r.result.timed_out) std::cerr << r.result.note << "\n";
    } else if (*dot) {
      const Environment env = environment_from_json(read_json(d_env));
      write_text(d_out, to_dot(build_graph(env.grid, d_condensed)));
    } else if (*obs) {
      const Environment env = environment_from_json(read_json(o_env));
      std::ofstream out(o_out);
      if (!out) throw std::runtime_error("cannot write " + o_out);
      ObservationConfig cfg;
      cfg.depth = o_depth;
      cfg.features = feature_set_from_string(o_features);
      const ControllerFactory inner = controller_factory(o_ctl);
      const EpisodeRun r = run_episode(
          env, [&] { return std::make_unique<ObservationDumper>(inner(), out, cfg); }, Limits::desk(), o_seed);
      if (r.result.crashed || r.result.timed_out) throw std::runtime_error(r.result.note);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
