#pragma once

#include <string>
#include <vector>

#include "hsim/network.hpp"

namespace hsim {

struct SpawnEvent {
  double time = 0.0;
  std::string route;
  double speed = 0.0;
};

struct VehicleDefaults {
  double wheelbase = 2.5;
  double half_length = 2.0;
  double half_width = 0.9;
};

struct Scenario {
  int version = 1;
  RoadNetwork network;
  std::vector<SpawnEvent> spawns;
  VehicleDefaults defaults;

  void validate() const {
    network.validate();
    for (const auto& sp : spawns) {
      network.find_route(sp.route);
      if (sp.time < 0.0) throw ValidationError("spawn time must be >= 0");
      if (sp.speed < 0.0) throw ValidationError("spawn speed must be >= 0");
    }
    if (defaults.wheelbase <= 0.0) throw ValidationError("wheelbase must be > 0");
  }
};

}  // namespace hsim
