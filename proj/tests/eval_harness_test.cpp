#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "railmapf/eval_harness.hpp"
#include "support/fixtures.hpp"

using namespace railmapf;
namespace fs = std::filesystem;

namespace {

EnvResult result(int test, int env, int n, int done, bool timed_out = false) {
  EnvResult r;
  r.test = test;
  r.env = env;
  r.n_agents = n;
  r.done = done;
  r.timed_out = timed_out;
  return r;
}

// Score recomputed from per-step accounting: -1 for every agent not done before
// a step (the arrival step included), +1 for every agent on the step that
// completes everyone.
double step_accounting_score(const EpisodeTrace& tr) {
  const size_t n = tr.header.agents.size();
  std::vector<uint8_t> done(n, 0);
  int64_t total = 0;
  for (const StepRecord& r : tr.steps) {
    size_t finished = 0;
    for (uint8_t d : done) finished += d;
    total -= static_cast<int64_t>(n - finished);
    for (int a : r.arrived) done[static_cast<size_t>(a)] = 1;
    finished += r.arrived.size();
    if (finished == n) {
      total += static_cast<int64_t>(n);
      break;
    }
  }
  return 1.0 + static_cast<double>(total) / (static_cast<double>(n) * tr.header.t_max);
}

class ConstantController : public Controller {
 public:
  explicit ConstantController(Action a) : a_(a) {}
  std::string name() const override { return "constant"; }
  void reset(const Simulator&, Clock::time_point) override {}
  std::vector<Action> act(const Simulator& sim, Clock::time_point) override {
    return std::vector<Action>(static_cast<size_t>(sim.num_agents()), a_);
  }

 private:
  Action a_;
};

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("railmapf_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

EvalSpec quick_spec(int first, int last, int envs) {
  EvalSpec s;
  s.first_test = first;
  s.last_test = last;
  s.envs_per_test = envs;
  s.limits = Limits::desk();
  s.limits.workers = 2;
  return s;
}

const std::string kEcho = RAILMAPF_ECHO_CONTROLLER;

}  // namespace

TEST(Termination, NineTimeoutsThenSuccessContinues) {
  std::vector<EnvResult> h;
  for (int l = 0; l < 9; ++l) h.push_back(result(3, l, 10, 0, true));
  EXPECT_EQ(check_termination(h, 0, Limits{}, false), Termination::None);
  h.push_back(result(4, 0, 10, 10));
  EXPECT_EQ(check_termination(h, 0, Limits{}, false), Termination::None);
  for (int l = 1; l < 10; ++l) h.push_back(result(4, l, 10, 0, true));
  EXPECT_EQ(check_termination(h, 0, Limits{}, false), Termination::None);
}

TEST(Termination, TenConsecutiveTimeoutsStop) {
  std::vector<EnvResult> h{result(2, 9, 4, 4)};
  for (int l = 0; l < 10; ++l) {
    EXPECT_EQ(check_termination(h, 0, Limits{}, false), Termination::None);
    h.push_back(result(3, l, 10, 0, true));
  }
  EXPECT_EQ(check_termination(h, 0, Limits{}, false), Termination::ConsecutiveTimeouts);
}

TEST(Termination, LowCompletionAtTestBoundaryOnly) {
  // 24 of 100 agents done in test 5.
  std::vector<EnvResult> h{result(4, 0, 50, 50)};
  for (int l = 0; l < 10; ++l) h.push_back(result(5, l, 10, l < 4 ? 6 : 0));
  EXPECT_EQ(check_termination(h, 0, Limits{}, false), Termination::None);
  EXPECT_EQ(check_termination(h, 0, Limits{}, true), Termination::LowCompletion);
  h.back().done = 1;  // 25 of 100
  EXPECT_EQ(check_termination(h, 0, Limits{}, true), Termination::None);
}

TEST(Termination, BudgetExhausted) {
  Limits l;
  l.budget_s = 100;
  const std::vector<EnvResult> h{result(0, 0, 1, 1)};
  EXPECT_EQ(check_termination(h, 99.9, l, false), Termination::None);
  EXPECT_EQ(check_termination(h, 100.0, l, false), Termination::Budget);
}

TEST(Limits, JsonAndValidation) {
  const Limits l = limits_from_json(nlohmann::json{{"planning_s", 2.5}, {"step_s", 0.2}, {"workers", 3}});
  EXPECT_EQ(l.planning_s, 2.5);
  EXPECT_EQ(l.step_s, 0.2);
  EXPECT_EQ(l.workers, 3);
  EXPECT_EQ(l.budget_s, 8 * 3600.0);
  EXPECT_THROW(limits_from_json(nlohmann::json{{"step_s", 0}}), std::invalid_argument);
  const Limits d = Limits::desk();
  EXPECT_EQ(d.planning_s, 10.0);
  EXPECT_EQ(d.step_s, 0.1);
  const Limits back = limits_from_json(limits_to_json(d));
  EXPECT_EQ(back.step_s, d.step_s);
}

TEST(Episode, PerfectSingleAgentScoreMatchesTrace) {
  const Environment env = generate(schedule(0, 0), GenConfig{5});
  ASSERT_EQ(env.agents.size(), 1u);
  const auto run = run_episode(env, controller_factory("pp-sipp-mcp"), Limits::desk(), 11);
  EXPECT_FALSE(run.result.timed_out);
  EXPECT_FALSE(run.result.crashed);
  EXPECT_EQ(run.result.done, 1);
  EXPECT_DOUBLE_EQ(run.result.score, step_accounting_score(run.trace));
  EXPECT_GT(run.result.score, 0.9);
  EXPECT_LT(run.result.score, 1.0);
}

TEST(Episode, IdleControllerScoresZero) {
  const Environment env = generate(schedule(2, 0), GenConfig{5});
  const auto run = run_episode(env, [] { return std::make_unique<ConstantController>(Action::DoNothing); },
                               Limits::desk(), 1);
  EXPECT_EQ(run.result.done, 0);
  EXPECT_DOUBLE_EQ(run.result.score, 0.0);
  EXPECT_DOUBLE_EQ(step_accounting_score(run.trace), 0.0);
}

TEST(Evaluation, IdleControllerTriggersCompletionRule) {
  EvalSpec spec = quick_spec(0, 3, 3);
  const auto report = run_evaluation([] { return std::make_unique<ConstantController>(Action::DoNothing); }, spec);
  EXPECT_EQ(report.termination, Termination::LowCompletion);
  EXPECT_EQ(report.stopped_after_test, 0);
  EXPECT_EQ(report.envs.size(), 3u);
  for (const EnvResult& e : report.envs) EXPECT_EQ(e.score, 0.0);
}

TEST(Evaluation, ReportedScoresMatchTraces) {
  EvalSpec spec = quick_spec(0, 2, 3);
  const fs::path dir = temp_dir("traces");
  spec.trace_dir = dir.string();
  const auto report = run_evaluation(controller_factory("pp-sipp-mcp"), spec);
  EXPECT_EQ(report.termination, Termination::None);
  ASSERT_EQ(report.envs.size(), 9u);
  double sum = 0;
  for (const EnvResult& e : report.envs) {
    const auto tr = read_trace((dir / ("test" + std::to_string(e.test) + "_env" + std::to_string(e.env) + ".jsonl")).string());
    EXPECT_DOUBLE_EQ(e.score, step_accounting_score(tr)) << e.test << "/" << e.env;
    EXPECT_DOUBLE_EQ(e.score, tr.score);
    sum += e.score;
  }
  EXPECT_DOUBLE_EQ(report.total(), sum);
  EXPECT_DOUBLE_EQ(report_to_json(report).at("total_score").get<double>(), sum);
  fs::remove_all(dir);
}

TEST(Evaluation, DeterministicWithoutWallClock) {
  EvalSpec spec = quick_spec(0, 2, 4);
  spec.limits.record_wall_clock = false;
  const auto a = run_evaluation(controller_factory("lns-mcp"), spec);
  const auto b = run_evaluation(controller_factory("lns-mcp"), spec);
  EXPECT_EQ(report_to_json(a, false).dump(), report_to_json(b, false).dump());
  const auto c = run_evaluation(controller_factory("masked-heuristic"), spec);
  const auto d = run_evaluation(controller_factory("masked-heuristic"), spec);
  EXPECT_EQ(report_to_json(c, false).dump(), report_to_json(d, false).dump());
}

TEST(External, EchoControllerMatchesInProcess) {
  const Environment env = generate(schedule(1, 0), GenConfig{3});
  const auto ext = run_episode(env, controller_factory("external:" + kEcho), Limits::desk(), 4);
  const auto in = run_episode(env, [] { return std::make_unique<ConstantController>(Action::MoveForward); },
                              Limits::desk(), 4);
  EXPECT_FALSE(ext.result.timed_out);
  EXPECT_FALSE(ext.result.crashed) << ext.result.note;
  EXPECT_EQ(trace_to_jsonl(ext.trace), trace_to_jsonl(in.trace));
  EXPECT_EQ(ext.result.score, in.result.score);
}

TEST(External, StepTimeoutScoresZeroAndNextEnvRuns) {
  EvalSpec spec = quick_spec(1, 1, 3);
  spec.limits.step_s = 0.05;
  spec.limits.workers = 1;
  const auto report = run_evaluation(controller_factory("external:" + kEcho + " --sleep-ms 300"), spec);
  ASSERT_EQ(report.envs.size(), 3u);
  for (const EnvResult& e : report.envs) {
    EXPECT_TRUE(e.timed_out);
    EXPECT_EQ(e.score, 0.0);
  }
}

TEST(External, CrashScoresZeroAndEvaluationContinues) {
  EvalSpec spec = quick_spec(1, 1, 2);
  const auto report = run_evaluation(controller_factory("external:" + kEcho + " --crash-after 2"), spec);
  ASSERT_EQ(report.envs.size(), 2u);
  for (const EnvResult& e : report.envs) {
    EXPECT_TRUE(e.crashed);
    EXPECT_FALSE(e.timed_out);
    EXPECT_EQ(e.score, 0.0);
  }
}

TEST(Registry, KnownNames) {
  EXPECT_EQ(controller_factory("pp-sipp-mcp")()->name(), "pp-sipp-mcp");
  EXPECT_EQ(controller_factory("lns-mcp")()->name(), "lns-mcp");
  EXPECT_EQ(controller_factory("masked-heuristic")()->name(), "masked-heuristic");
  EXPECT_EQ(controller_factory("external:cat")()->name(), "external:cat");
  EXPECT_THROW(controller_factory("random"), std::invalid_argument);
}

TEST(ReplayStats, PerfectRunHasNoDelaysOrDeadlocks) {
  auto grid = fixtures::share(fixtures::ring(10, 6));
  Simulator sim(reset(grid, {{{0, 1}, Direction::E, {0, 8}}, {{5, 8}, Direction::W, {5, 1}}}, {}, 0, 60));
  PlanController ctl;
  ctl.reset(sim, Clock::now() + std::chrono::hours(1));
  while (!sim.terminated()) sim.step(ctl.act(sim, Clock::now() + std::chrono::hours(1)));
  const TraceStats s = trace_stats(sim.trace());
  EXPECT_EQ(s.deadlocks, 0);
  EXPECT_EQ(s.done, 2);
  for (const auto& d : s.delays) EXPECT_EQ(d, std::optional<int>(0));
  int64_t heat = 0;
  for (int64_t h : s.heat) heat += h;
  int64_t occupied = 0;
  for (const StepRecord& r : sim.trace().steps)
    for (const auto& p : r.positions) occupied += p ? 1 : 0;
  EXPECT_EQ(heat, occupied);
}

TEST(ReplayStats, HeadOnPairCountsTwoDeadlocks) {
  auto grid = fixtures::share(fixtures::ring(10, 6));
  Simulator sim(reset(grid, {{{0, 2}, Direction::E, {0, 8}}, {{0, 5}, Direction::W, {0, 0}}}, {}, 0, 30));
  while (!sim.terminated()) sim.step({Action::MoveForward, Action::MoveForward});
  const TraceStats s = trace_stats(sim.trace());
  EXPECT_EQ(s.deadlocks, 2);
  EXPECT_EQ(s.done, 0);
  EXPECT_FALSE(s.delays[0].has_value());
}

TEST(ReplayStats, ScoreCurveAndMalformedFiles) {
  const fs::path dir = temp_dir("replay");
  std::vector<double> scores;
  for (int l = 0; l < 10; ++l) {
    const Environment env = generate(schedule(1, l), GenConfig{static_cast<uint64_t>(l)});
    const auto run = run_episode(env, controller_factory("pp-sipp-mcp"), Limits::desk(), static_cast<uint64_t>(l));
    write_trace(run.trace, (dir / ("t1_e" + std::to_string(l) + ".jsonl")).string());
    scores.push_back(run.trace.score);
  }
  std::ofstream(dir / "broken.jsonl") << "{not json\n";
  const ReplayStats rs = replay_stats(trace_files(dir.string()));
  ASSERT_EQ(rs.files.size(), 11u);
  int errors = 0;
  for (const auto& f : rs.files) errors += f.error.empty() ? 0 : 1;
  EXPECT_EQ(errors, 1);
  ASSERT_EQ(rs.curve.size(), 1u);
  EXPECT_EQ(rs.curve[0].test, 1);
  EXPECT_EQ(rs.curve[0].n, 10);
  double mean = 0;
  for (double s : scores) mean += s;
  mean /= 10;
  EXPECT_NEAR(rs.curve[0].mean, mean, 1e-12);
  std::sort(scores.begin(), scores.end());
  // 0.1-quantile with linear interpolation: position 0.9 between the two smallest.
  EXPECT_NEAR(rs.curve[0].q10, scores[0] + 0.9 * (scores[1] - scores[0]), 1e-12);

  const fs::path out = dir / "plots";
  write_replay_outputs(rs, out.string());
  for (const char* f : {"summary.json", "score_curve.csv", "score_curve.svg", "heat.csv"}) EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto summary = nlohmann::json::parse(std::ifstream(out / "summary.json"));
  EXPECT_EQ(summary.at("files").size(), 11u);
  fs::remove_all(dir);
}

TEST(Cli, EndToEnd) {
  const fs::path dir = temp_dir("cli");
  const std::string cli = RAILMAPF_CLI;
  auto sh = [](const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); };
  const std::string env = (dir / "env.json").string();
  ASSERT_EQ(sh(cli + " gen --test 1 --env 0 --seed 3 --out " + env), 0);
  ASSERT_EQ(sh(cli + " gen --schedule --out " + (dir / "schedule.json").string()), 0);
  const auto sched = nlohmann::json::parse(std::ifstream(dir / "schedule.json"));
  EXPECT_EQ(sched.size(), static_cast<size_t>(kNumTests * kEnvsPerTest));
  std::ofstream(dir / "config.json") << R"({"lns": true, "max_iterations": 20, "seed": 1})";
  ASSERT_EQ(sh(cli + " solve --env " + env + " --config " + (dir / "config.json").string() + " --out " +
               (dir / "plan.json").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "plan.json"));
  std::ofstream(dir / "seeds.json") << "[1, 2, 3]";
  std::ofstream(dir / "limits.json") << R"({"planning_s": 10, "step_s": 0.5, "workers": 2})";
  ASSERT_EQ(sh(cli + " eval --controller pp-sipp-mcp --tests 0..1 --envs 2 --seeds " + (dir / "seeds.json").string() +
               " --limits " + (dir / "limits.json").string() + " --report " + (dir / "report.json").string() +
               " --traces " + (dir / "traces").string()),
            0);
  const auto report = nlohmann::json::parse(std::ifstream(dir / "report.json"));
  EXPECT_EQ(report.at("envs").size(), 4u);
  ASSERT_EQ(sh(cli + " replay-stats --in " + (dir / "traces").string() + " --plot " + (dir / "plots").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "plots" / "score_curve.svg"));
  ASSERT_EQ(sh(cli + " dot --env " + env + " --condensed --out " + (dir / "g.dot").string()), 0);
  ASSERT_EQ(sh(cli + " observe --env " + env + " --controller masked-heuristic --out " + (dir / "obs.jsonl").string()), 0);
  EXPECT_GT(fs::file_size(dir / "obs.jsonl"), 0u);
  EXPECT_NE(sh(cli + " eval --controller nope --tests 0..0 --report " + (dir / "r.json").string()), 0);
  fs::remove_all(dir);
}
