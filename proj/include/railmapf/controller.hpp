#pragma once

// Controller contract: initial planning once per episode, then one action per
// agent per step, each under a wall-clock deadline.

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "railmapf/sim_engine.hpp"

namespace railmapf {

using Clock = std::chrono::steady_clock;

class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  /// Called once at t = 0 before the first step.
  virtual void reset(const Simulator& sim, Clock::time_point deadline) = 0;
  virtual std::vector<Action> act(const Simulator& sim, Clock::time_point deadline) = 0;
};

using ControllerFactory = std::function<std::unique_ptr<Controller>()>;

/// Per-agent decision hook used by the masked wrapper.
class AgentPolicy {
 public:
  virtual ~AgentPolicy() = default;
  virtual std::string name() const = 0;
  virtual void reset(const Simulator& sim, Clock::time_point deadline) = 0;
  /// Called once per step before any decide() of that step.
  virtual void begin_step(const Simulator&) {}
  virtual Action decide(const Simulator& sim, int agent) = 0;
};

}  // namespace railmapf
