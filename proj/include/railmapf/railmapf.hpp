#pragma once

#include "railmapf/rail_core.hpp"
#include "railmapf/sim_engine.hpp"
#include "railmapf/env_gen.hpp"
#include "railmapf/rail_graph.hpp"
#include "railmapf/planning.hpp"
#include "railmapf/sipp.hpp"
#include "railmapf/solver.hpp"
#include "railmapf/controller.hpp"
#include "railmapf/exec_policy.hpp"
#include "railmapf/obs_reward.hpp"
#include "railmapf/eval_harness.hpp"
