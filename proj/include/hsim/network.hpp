#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hsim/errors.hpp"
#include "hsim/geometry.hpp"

namespace hsim {

struct Lane {
  std::string id;
  Polyline centerline;
  double width = 3.5;        // [m]
  double speed_limit = 13.9; // [m/s]
  std::string left;          // neighbor lane id, empty if none
  std::string right;
};

struct SignalPhase {
  std::vector<std::string> green_lanes;  // lanes with a green movement
  double duration = 10.0;                // [s]
};

struct Junction {
  std::string id;
  std::vector<Vec2> conflict_points;
  std::vector<std::string> stop_lanes;  // lanes whose end is this junction's stop line
  std::vector<SignalPhase> cycle;       // empty = unsignalized
};

struct Route {
  std::string id;
  std::vector<std::string> lanes;  // ordered lane ids
};

class RoadNetwork {
 public:
  std::vector<Lane> lanes;
  std::vector<Junction> junctions;
  std::vector<Route> routes;

  void validate() const {
    for (const auto& l : lanes) {
      if (l.width <= 0.0) throw ValidationError("lane " + l.id + " has non-positive width");
      if (!l.left.empty()) find_lane(l.left);
      if (!l.right.empty()) find_lane(l.right);
    }
    for (const auto& r : routes) {
      if (r.lanes.empty()) throw ValidationError("route " + r.id + " has no lanes");
      for (const auto& lid : r.lanes) find_lane(lid);
    }
    for (const auto& j : junctions) {
      for (const auto& lid : j.stop_lanes) find_lane(lid);
      for (const auto& ph : j.cycle)
        for (const auto& lid : ph.green_lanes) find_lane(lid);
    }
  }

  const Lane& find_lane(const std::string& id) const {
    for (const auto& l : lanes)
      if (l.id == id) return l;
    throw ValidationError("unknown lane '" + id + "'");
  }

  const Route& find_route(const std::string& id) const {
    for (const auto& r : routes)
      if (r.id == id) return r;
    throw ValidationError("unknown route '" + id + "'");
  }

  // Concatenated centerline of a route, cached per route id.
  const Polyline& route_path(const std::string& route_id) const {
    auto it = path_cache_.find(route_id);
    if (it != path_cache_.end()) return it->second;
    const Route& r = find_route(route_id);
    std::vector<Vec2> pts;
    for (const auto& lid : r.lanes) {
      const auto& cp = find_lane(lid).centerline.points();
      for (const auto& p : cp) {
        if (!pts.empty() && distance(pts.back(), p) < 1e-9) continue;
        pts.push_back(p);
      }
    }
    return path_cache_.emplace(route_id, Polyline(std::move(pts))).first->second;
  }

  // Speed limit of the route's lane containing arc position s.
  double route_speed_limit(const std::string& route_id, double s) const {
    const Route& r = find_route(route_id);
    double acc = 0.0;
    for (const auto& lid : r.lanes) {
      const Lane& l = find_lane(lid);
      acc += l.centerline.length();
      if (s <= acc) return l.speed_limit;
    }
    return find_lane(r.lanes.back()).speed_limit;
  }

  // Per-junction phase indices for fixed-cycle schedules at time t.
  std::vector<int> signal_phases(double t) const {
    std::vector<int> phases(junctions.size(), 0);
    for (std::size_t j = 0; j < junctions.size(); ++j) {
      const auto& cyc = junctions[j].cycle;
      if (cyc.empty()) continue;
      double total = 0.0;
      for (const auto& ph : cyc) total += ph.duration;
      double tm = std::fmod(t, total);
      int idx = 0;
      for (const auto& ph : cyc) {
        if (tm < ph.duration) break;
        tm -= ph.duration;
        ++idx;
      }
      phases[j] = std::min<int>(idx, static_cast<int>(cyc.size()) - 1);
    }
    return phases;
  }

  bool lane_green(const std::string& lane_id, const std::vector<int>& phases) const {
    for (std::size_t j = 0; j < junctions.size(); ++j) {
      const auto& jn = junctions[j];
      bool controls = false;
      for (const auto& lid : jn.stop_lanes)
        if (lid == lane_id) controls = true;
      if (!controls || jn.cycle.empty()) continue;
      const auto& ph = jn.cycle[static_cast<std::size_t>(phases[j])];
      for (const auto& g : ph.green_lanes)
        if (g == lane_id) return true;
      return false;
    }
    return true;  // uncontrolled lane
  }

  // Distance from arc position s to the end of the route's current lane if that
  // lane feeds a signalized junction; nullopt otherwise.
  struct StopLineInfo {
    double distance = 0.0;
    std::string lane_id;
  };
  std::optional<StopLineInfo> next_stop_line(const std::string& route_id, double s) const {
    const Route& r = find_route(route_id);
    double acc = 0.0;
    for (const auto& lid : r.lanes) {
      const Lane& l = find_lane(lid);
      acc += l.centerline.length();
      if (s <= acc) {
        for (const auto& jn : junctions) {
          if (jn.cycle.empty()) continue;
          for (const auto& sl : jn.stop_lanes)
            if (sl == lid) return StopLineInfo{acc - s, lid};
        }
        return std::nullopt;
      }
    }
    return std::nullopt;
  }

  // Nearest conflict point distance over all junctions; +inf if none.
  double distance_to_conflict(const Vec2& p) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& jn : junctions)
      for (const auto& cp : jn.conflict_points)
        best = std::min(best, distance(p, cp));
    return best;
  }

 private:
  mutable std::map<std::string, Polyline> path_cache_;
};

}  // namespace hsim
