#pragma once

#include <vector>

#include "hsim/policy_high.hpp"
#include "hsim/scene.hpp"

namespace hsim {

struct AgentRecord {
  int agent_id = 0;          // persistent across spawn/despawn
  AgentState state;          // post-step state
  Control control;           // executed control
  Maneuver maneuver = Maneuver::Maintain;
  double reward = 0.0;
};

struct StepRecord {
  double time = 0.0;  // time of the post-step state
  std::vector<AgentRecord> agents;
};

}  // namespace hsim
