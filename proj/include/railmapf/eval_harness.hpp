#pragma once

// Evaluation over the test schedule: timeouts, scores, termination rules,
// external controllers over stdio, and trace statistics.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "railmapf/controller.hpp"
#include "railmapf/env_gen.hpp"
#include "railmapf/exec_policy.hpp"
#include "railmapf/obs_reward.hpp"

namespace railmapf {

struct Limits {
  double planning_s = 600.0;
  double step_s = 10.0;
  double budget_s = 8 * 3600.0;
  int workers = 4;
  double memory_gb = 15.0;  // informational
  bool record_wall_clock = true;

  /// Tests 0..7 in minutes rather than hours.
  static Limits desk() {
    Limits l;
    l.planning_s = 10.0;
    l.step_s = 0.1;
    l.budget_s = 3600.0;
    return l;
  }
  void validate() const {
    if (!(planning_s > 0) || !(step_s > 0) || !(budget_s > 0) || workers < 1 || !(memory_gb > 0))
      throw std::invalid_argument("limits must be positive");
  }
};

inline Limits limits_from_json(const nlohmann::json& j, Limits base = {}) {
  Limits l = base;
  l.planning_s = j.value("planning_s", l.planning_s);
  l.step_s = j.value("step_s", l.step_s);
  l.budget_s = j.value("budget_s", l.budget_s);
  l.workers = j.value("workers", l.workers);
  l.memory_gb = j.value("memory_gb", l.memory_gb);
  l.record_wall_clock = j.value("record_wall_clock", l.record_wall_clock);
  l.validate();
  return l;
}

inline nlohmann::json limits_to_json(const Limits& l) {
  return {{"planning_s", l.planning_s}, {"step_s", l.step_s}, {"budget_s", l.budget_s},
          {"workers", l.workers},       {"memory_gb", l.memory_gb}, {"record_wall_clock", l.record_wall_clock}};
}

struct EnvResult {
  int test = 0;
  int env = 0;
  int n_agents = 0;
  uint64_t gen_seed = 0;
  uint64_t sim_seed = 0;
  double score = 0.0;
  int done = 0;
  double completion = 0.0;
  int t_end = 0;
  double wall_s = 0.0;
  bool timed_out = false;
  bool crashed = false;
  std::string note;
};

enum class Termination : uint8_t { None, ConsecutiveTimeouts, LowCompletion, Budget };

inline std::string to_string(Termination t) {
  switch (t) {
    case Termination::None: return "none";
    case Termination::ConsecutiveTimeouts: return "consecutive-timeouts";
    case Termination::LowCompletion: return "low-completion";
    case Termination::Budget: return "budget";
  }
  return "?";
}

struct EvalReport {
  std::string controller;
  std::vector<EnvResult> envs;
  Termination termination = Termination::None;
  int stopped_after_test = -1;

  double total() const {
    double s = 0;
    for (const EnvResult& e : envs) s += e.score;
    return s;
  }
};

inline nlohmann::json report_to_json(const EvalReport& r, bool wall_clock = true) {
  nlohmann::json envs = nlohmann::json::array();
  for (const EnvResult& e : r.envs) {
    nlohmann::json j{{"test", e.test},           {"env", e.env},         {"n_agents", e.n_agents},
                     {"gen_seed", e.gen_seed},   {"sim_seed", e.sim_seed}, {"score", e.score},
                     {"done", e.done},           {"completion", e.completion}, {"t_end", e.t_end},
                     {"timed_out", e.timed_out}, {"crashed", e.crashed}, {"note", e.note}};
    if (wall_clock) j["wall_s"] = e.wall_s;
    envs.push_back(std::move(j));
  }
  return {{"controller", r.controller},
          {"total_score", r.total()},
          {"termination", to_string(r.termination)},
          {"stopped_after_test", r.stopped_after_test},
          {"envs", std::move(envs)}};
}

// ---------------------------------------------------------------------------
// Termination rules

inline constexpr int kMaxConsecutiveTimeouts = 10;
inline constexpr double kMinTestCompletion = 0.25;

/// Stop reason after the latest result, or None. The completion rule is applied
/// only when `test_completed` is set and looks at the results of the latest test.
inline Termination check_termination(const std::vector<EnvResult>& history, double elapsed_s, const Limits& limits,
                                     bool test_completed) {
  int streak = 0;
  for (auto it = history.rbegin(); it != history.rend() && it->timed_out; ++it) ++streak;
  if (streak >= kMaxConsecutiveTimeouts) return Termination::ConsecutiveTimeouts;
  if (test_completed && !history.empty()) {
    const int test = history.back().test;
    int64_t done = 0, agents = 0;
    for (const EnvResult& e : history)
      if (e.test == test) {
        done += e.done;
        agents += e.n_agents;
      }
    if (agents > 0 && static_cast<double>(done) < kMinTestCompletion * static_cast<double>(agents))
      return Termination::LowCompletion;
  }
  if (elapsed_s >= limits.budget_s) return Termination::Budget;
  return Termination::None;
}

// ---------------------------------------------------------------------------
// Episodes

class StepTimeout : public std::runtime_error {
 public:
  StepTimeout() : std::runtime_error("controller missed its deadline") {}
};

struct EpisodeRun {
  EnvResult result;
  EpisodeTrace trace;
};

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline Clock::time_point after(double seconds) {
  return Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(seconds));
}

/// Runs one episode. A missed deadline or an exception scores the environment 0.
inline EpisodeRun run_episode(const Environment& env, const ControllerFactory& factory, const Limits& limits,
                              uint64_t sim_seed) {
  EpisodeRun run;
  EnvResult& r = run.result;
  r.test = env.test;
  r.env = env.env;
  r.n_agents = static_cast<int>(env.agents.size());
  r.gen_seed = env.seed;
  r.sim_seed = sim_seed;
  const auto t0 = Clock::now();
  Simulator sim(env.episode(sim_seed));
  try {
    auto ctl = factory();
    const auto plan_deadline = after(limits.planning_s);
    ctl->reset(sim, plan_deadline);
    if (Clock::now() > plan_deadline) throw StepTimeout();
    while (!sim.terminated()) {
      const auto deadline = after(limits.step_s);
      const auto acts = ctl->act(sim, deadline);
      if (Clock::now() > deadline) throw StepTimeout();
      sim.step(acts);
    }
    r.score = sim.trace().score;
  } catch (const StepTimeout& e) {
    r.timed_out = true;
    r.note = e.what();
  } catch (const std::exception& e) {
    r.crashed = true;
    r.note = e.what();
  }
  r.done = sim.num_done();
  r.completion = r.n_agents > 0 ? static_cast<double>(r.done) / r.n_agents : 0.0;
  r.t_end = sim.time();
  if (r.timed_out || r.crashed) r.score = 0.0;
  r.wall_s = limits.record_wall_clock ? seconds_since(t0) : 0.0;
  run.trace = sim.trace();
  return run;
}

struct SeedPlan {
  std::vector<uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};

  uint64_t gen_seed(int test, int env) const {
    return mix_seed(seeds[static_cast<size_t>(env) % seeds.size()], static_cast<uint64_t>(test));
  }
  uint64_t sim_seed(int test, int env) const { return mix_seed(gen_seed(test, env), 0x51'6d'00ULL); }
};

inline SeedPlan seeds_from_json(const nlohmann::json& j) {
  SeedPlan p;
  const nlohmann::json& arr = j.is_object() ? j.at("seeds") : j;
  p.seeds = arr.get<std::vector<uint64_t>>();
  if (p.seeds.empty()) throw std::invalid_argument("seed list is empty");
  return p;
}

struct EvalSpec {
  int first_test = 0;
  int last_test = 7;
  int envs_per_test = kEnvsPerTest;
  SeedPlan seeds;
  Limits limits = Limits::desk();
  std::string trace_dir;  // empty: no trace files
  /// Optional override of the generated parameters (tests use smaller instances).
  std::function<TestParams(int test, int env)> params;
};

inline EvalReport run_evaluation(const ControllerFactory& factory, const EvalSpec& spec) {
  spec.limits.validate();
  EvalReport report;
  report.controller = factory()->name();
  const auto t0 = Clock::now();
  if (!spec.trace_dir.empty()) std::filesystem::create_directories(spec.trace_dir);
  for (int k = spec.first_test; k <= spec.last_test; ++k) {
    const int n = spec.envs_per_test;
    std::vector<std::optional<EpisodeRun>> runs(static_cast<size_t>(n));
    std::vector<uint8_t> skipped(static_cast<size_t>(n), 0);
    auto work = [&](int l) {
      if (seconds_since(t0) >= spec.limits.budget_s) {
        skipped[static_cast<size_t>(l)] = 1;
        return;
      }
      const TestParams p = spec.params ? spec.params(k, l) : schedule(k, l);
      try {
        const Environment env = generate(p, GenConfig{spec.seeds.gen_seed(k, l)});
        runs[static_cast<size_t>(l)] = run_episode(env, factory, spec.limits, spec.seeds.sim_seed(k, l));
      } catch (const std::exception& e) {
        EpisodeRun bad;
        bad.result.test = k;
        bad.result.env = l;
        bad.result.n_agents = p.n_agents;
        bad.result.gen_seed = spec.seeds.gen_seed(k, l);
        bad.result.crashed = true;
        bad.result.note = e.what();
        runs[static_cast<size_t>(l)] = std::move(bad);
      }
    };
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    const int workers = std::min(spec.limits.workers, n);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int l = next++; l < n; l = next++) work(l);
      });
    for (auto& th : pool) th.join();

    for (int l = 0; l < n; ++l) {
      if (skipped[static_cast<size_t>(l)] || !runs[static_cast<size_t>(l)]) {
        report.termination = Termination::Budget;
        break;
      }
      EpisodeRun& run = *runs[static_cast<size_t>(l)];
      if (!spec.trace_dir.empty() && !run.trace.steps.empty())
        write_trace(run.trace, spec.trace_dir + "/test" + std::to_string(k) + "_env" + std::to_string(l) + ".jsonl");
      report.envs.push_back(run.result);
      const Termination t = check_termination(report.envs, seconds_since(t0), spec.limits, l == n - 1);
      if (t != Termination::None) {
        report.termination = t;
        break;
      }
    }
    if (report.termination != Termination::None) {
      report.stopped_after_test = k;
      break;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// External controller: one JSON line per request and per reply.

inline nlohmann::json state_to_json(const Simulator& sim) {
  nlohmann::json agents = nlohmann::json::array();
  for (const AgentState& a : sim.agents()) {
    nlohmann::json j{{"phase", a.phase == AgentPhase::OffGrid ? "off" : a.phase == AgentPhase::OnGrid ? "on" : "done"},
                     {"malfunction", a.malfunction_remaining},
                     {"deadlocked", a.deadlocked}};
    if (a.phase == AgentPhase::OnGrid) {
      j["cell"] = cell_to_json(a.cell);
      j["heading"] = std::string(1, direction_char(a.heading));
    }
    agents.push_back(std::move(j));
  }
  return {{"type", "step"}, {"t", sim.time()}, {"agents", std::move(agents)}};
}

inline nlohmann::json episode_to_json(const Simulator& sim) {
  nlohmann::json agents = nlohmann::json::array();
  for (const AgentSpec& s : sim.specs()) agents.push_back(agent_spec_to_json(s));
  return {{"type", "reset"}, {"grid", grid_to_json(sim.grid())}, {"agents", std::move(agents)}, {"t_max", sim.t_max()}};
}

class ExternalController : public Controller {
 public:
  explicit ExternalController(std::string command) : command_(std::move(command)) {}
  ~ExternalController() override { stop(); }
  ExternalController(const ExternalController&) = delete;
  ExternalController& operator=(const ExternalController&) = delete;

  std::string name() const override { return "external:" + command_; }

  void reset(const Simulator& sim, Clock::time_point deadline) override {
    stop();
    start();
    exchange(episode_to_json(sim), deadline);
  }

  std::vector<Action> act(const Simulator& sim, Clock::time_point deadline) override {
    const nlohmann::json reply = exchange(state_to_json(sim), deadline);
    std::vector<Action> acts;
    for (const auto& a : reply.at("actions")) acts.push_back(action_from_int(a.get<int>()));
    if (static_cast<int>(acts.size()) != sim.num_agents()) throw std::runtime_error("wrong number of actions");
    return acts;
  }

 private:
  void start() {
    int in[2], out[2];
    if (pipe(in) != 0 || pipe(out) != 0) throw std::runtime_error("pipe failed");
    pid_ = fork();
    if (pid_ < 0) throw std::runtime_error("fork failed");
    if (pid_ == 0) {
      dup2(in[0], STDIN_FILENO);
      dup2(out[1], STDOUT_FILENO);
      close(in[0]);
      close(in[1]);
      close(out[0]);
      close(out[1]);
      execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(in[0]);
    close(out[1]);
    to_child_ = in[1];
    from_child_ = out[0];
    buffer_.clear();
  }

  void stop() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
      kill(pid_, SIGKILL);
      waitpid(pid_, nullptr, 0);
    }
    pid_ = -1;
  }

  nlohmann::json exchange(const nlohmann::json& msg, Clock::time_point deadline) {
    const std::string line = msg.dump() + "\n";
    size_t off = 0;
    signal(SIGPIPE, SIG_IGN);
    while (off < line.size()) {
      const ssize_t w = write(to_child_, line.data() + off, line.size() - off);
      if (w < 0) {
        if (errno == EINTR) continue;
        throw std::runtime_error("controller closed its input");
      }
      off += static_cast<size_t>(w);
    }
    while (true) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        const std::string reply = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return nlohmann::json::parse(reply);
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
      if (left <= 0) throw StepTimeout();
      pollfd p{from_child_, POLLIN, 0};
      const int rc = poll(&p, 1, static_cast<int>(std::min<int64_t>(left, 1 << 30)));
      if (rc < 0 && errno == EINTR) continue;
      if (rc == 0) throw StepTimeout();
      char buf[4096];
      const ssize_t got = read(from_child_, buf, sizeof buf);
      if (got <= 0) throw std::runtime_error("controller exited");
      buffer_.append(buf, static_cast<size_t>(got));
    }
  }

  std::string command_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

// ---------------------------------------------------------------------------
// Controller registry

inline ControllerFactory controller_factory(const std::string& name, const PlanControllerConfig& plan = {}) {
  if (name == "pp-sipp-mcp") return [plan] { return std::make_unique<PlanController>(plan); };
  if (name == "lns-mcp") {
    PlanControllerConfig c = plan;
    c.lns = true;
    return [c] { return std::make_unique<PlanController>(c); };
  }
  if (name == "masked-heuristic")
    return [] { return std::make_unique<MaskedController>(std::make_unique<HeuristicPolicy>()); };
  if (name.rfind("external:", 0) == 0) {
    const std::string cmd = name.substr(9);
    return [cmd] { return std::make_unique<ExternalController>(cmd); };
  }
  throw std::invalid_argument("unknown controller: " + name);
}

// ---------------------------------------------------------------------------
// Trace statistics

struct TraceStats {
  std::string path;
  std::string error;
  int test = -1;
  int env = -1;
  int n_agents = 0;
  double score = 0;
  int done = 0;
  int deadlocks = 0;
  std::vector<std::optional<int>> delays;  // arrival minus earliest possible arrival
  std::map<int, int64_t> cluster_occupancy;  // agents inside -> cluster-steps
  std::vector<int64_t> heat;                 // per cell, agent-steps
};

struct ScorePoint {
  int test;
  int n;
  double mean;
  double q10;
};

struct ReplayStats {
  std::vector<TraceStats> files;
  std::vector<ScorePoint> curve;
};

/// Linear-interpolation quantile of a non-empty sample.
inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

inline TraceStats trace_stats(const EpisodeTrace& tr) {
  TraceStats s;
  const RailGrid& g = tr.header.grid;
  s.test = tr.header.test;
  s.env = tr.header.env;
  s.n_agents = static_cast<int>(tr.header.agents.size());
  s.score = tr.score;
  s.heat.assign(static_cast<size_t>(g.num_cells()), 0);
  const auto clusters = find_clusters(g);
  const auto labels = cluster_labels(g, clusters);
  std::vector<int> arrival(static_cast<size_t>(s.n_agents), -1);
  for (const StepRecord& r : tr.steps) {
    s.deadlocks += static_cast<int>(r.deadlocks.size());
    for (int a : r.arrived) arrival[static_cast<size_t>(a)] = r.t + 1;
    std::vector<int> inside(clusters.size(), 0);
    for (const auto& p : r.positions) {
      if (!p) continue;
      const int c = g.index(p->cell);
      ++s.heat[static_cast<size_t>(c)];
      if (labels[static_cast<size_t>(c)] >= 0) ++inside[static_cast<size_t>(labels[static_cast<size_t>(c)])];
    }
    for (int k : inside) ++s.cluster_occupancy[k];
  }
  for (int i = 0; i < s.n_agents; ++i) {
    if (arrival[static_cast<size_t>(i)] < 0) {
      s.delays.push_back(std::nullopt);
      continue;
    }
    ++s.done;
    const AgentSpec& a = tr.header.agents[static_cast<size_t>(i)];
    const auto d = distance_map(g, a.target).at(g.index(a.origin), a.direction);
    s.delays.push_back(arrival[static_cast<size_t>(i)] - (1 + d.value_or(0)));
  }
  return s;
}

inline std::vector<ScorePoint> score_curve(const std::vector<TraceStats>& files) {
  std::map<int, std::vector<double>> by_test;
  for (const TraceStats& f : files)
    if (f.error.empty()) by_test[f.test].push_back(f.score);
  std::vector<ScorePoint> out;
  for (const auto& [k, v] : by_test) {
    double sum = 0;
    for (double x : v) sum += x;
    out.push_back({k, static_cast<int>(v.size()), sum / static_cast<double>(v.size()), quantile(v, 0.1)});
  }
  return out;
}

inline ReplayStats replay_stats(const std::vector<std::string>& paths) {
  ReplayStats rs;
  for (const std::string& p : paths) {
    try {
      TraceStats s = trace_stats(read_trace(p));
      s.path = p;
      rs.files.push_back(std::move(s));
    } catch (const std::exception& e) {
      TraceStats s;
      s.path = p;
      s.error = e.what();
      rs.files.push_back(std::move(s));
    }
  }
  rs.curve = score_curve(rs.files);
  return rs;
}

inline std::vector<std::string> trace_files(const std::string& dir) {
  std::vector<std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

inline nlohmann::json replay_stats_to_json(const ReplayStats& rs) {
  nlohmann::json files = nlohmann::json::array();
  for (const TraceStats& s : rs.files) {
    nlohmann::json j{{"path", s.path}};
    if (!s.error.empty()) {
      j["error"] = s.error;
      files.push_back(std::move(j));
      continue;
    }
    nlohmann::json delays = nlohmann::json::array();
    for (const auto& d : s.delays) delays.push_back(d ? nlohmann::json(*d) : nlohmann::json(nullptr));
    nlohmann::json occ = nlohmann::json::object();
    for (const auto& [k, v] : s.cluster_occupancy) occ[std::to_string(k)] = v;
    j.update({{"test", s.test}, {"env", s.env}, {"n_agents", s.n_agents}, {"score", s.score}, {"done", s.done},
              {"deadlocks", s.deadlocks}, {"delays", delays}, {"cluster_occupancy", occ}});
    files.push_back(std::move(j));
  }
  nlohmann::json curve = nlohmann::json::array();
  for (const ScorePoint& p : rs.curve) curve.push_back({{"test", p.test}, {"n", p.n}, {"mean", p.mean}, {"q10", p.q10}});
  return {{"files", files}, {"score_curve", curve}};
}

inline std::string score_curve_csv(const std::vector<ScorePoint>& curve) {
  std::ostringstream o;
  o << "test,n,mean,q10\n" << std::setprecision(10);
  for (const ScorePoint& p : curve) o << p.test << ',' << p.n << ',' << p.mean << ',' << p.q10 << '\n';
  return o.str();
}

/// Mean score per test as a polyline over a shaded 0.1-quantile band.
inline std::string score_curve_svg(const std::vector<ScorePoint>& curve) {
  const double W = 640, H = 360, m = 40;
  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<line x1=\"" << m << "\" y1=\"" << H - m << "\" x2=\"" << W - m << "\" y2=\"" << H - m << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << m << "\" y1=\"" << m << "\" x2=\"" << m << "\" y2=\"" << H - m << "\" stroke=\"black\"/>\n";
  if (!curve.empty()) {
    const int k0 = curve.front().test, k1 = std::max(curve.back().test, k0 + 1);
    auto x = [&](int k) { return m + (W - 2 * m) * (k - k0) / static_cast<double>(k1 - k0); };
    auto y = [&](double s) { return H - m - (H - 2 * m) * std::clamp(s, 0.0, 1.0); };
    o << "<polygon fill=\"#cfe3f7\" points=\"";
    for (const ScorePoint& p : curve) o << x(p.test) << ',' << y(p.mean) << ' ';
    for (auto it = curve.rbegin(); it != curve.rend(); ++it) o << x(it->test) << ',' << y(it->q10) << ' ';
    o << "\"/>\n<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"2\" points=\"";
    for (const ScorePoint& p : curve) o << x(p.test) << ',' << y(p.mean) << ' ';
    o << "\"/>\n";
    for (const ScorePoint& p : curve)
      o << "<text x=\"" << x(p.test) << "\" y=\"" << H - m + 16 << "\" font-size=\"10\" text-anchor=\"middle\">"
        << p.test << "</text>\n";
  }
  o << "<text x=\"" << W / 2 << "\" y=\"" << H - 6 << "\" font-size=\"12\" text-anchor=\"middle\">test</text>\n";
  o << "<text x=\"12\" y=\"" << H / 2 << "\" font-size=\"12\" transform=\"rotate(-90 12 " << H / 2
    << ")\" text-anchor=\"middle\">score</text>\n</svg>\n";
  return o.str();
}

inline void write_replay_outputs(const ReplayStats& rs, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir + "/summary.json") << replay_stats_to_json(rs).dump(2) << '\n';
  std::ofstream(dir + "/score_curve.csv") << score_curve_csv(rs.curve);
  std::ofstream(dir + "/score_curve.svg") << score_curve_svg(rs.curve);
  std::ofstream heat(dir + "/heat.csv");
  heat << "file,row,col,count\n";
  for (const TraceStats& s : rs.files) {
    if (!s.error.empty()) continue;
    const RailGrid g = read_trace(s.path).header.grid;
    for (int c = 0; c < static_cast<int>(s.heat.size()); ++c)
      if (s.heat[static_cast<size_t>(c)] > 0)
        heat << std::filesystem::path(s.path).filename().string() << ',' << g.cell(c).row << ',' << g.cell(c).col
             << ',' << s.heat[static_cast<size_t>(c)] << '\n';
  }
}

}  // namespace railmapf
