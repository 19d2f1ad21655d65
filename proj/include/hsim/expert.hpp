#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "hsim/errors.hpp"
#include "hsim/geometry.hpp"
#include "hsim/scene.hpp"

namespace hsim {

struct IdmConfig {
  double v0 = 30.0;      // desired speed cap [m/s]; effective v0 = min(v0, lane limit)
  double headway = 1.5;  // [s]
  double s0 = 2.0;       // minimum gap [m]
  double a_idm = 1.5;    // [m/s^2]
  double b = 2.0;        // comfortable deceleration [m/s^2]
  double exponent = 4.0;
};

struct PursuitConfig {
  double lookahead_base = 4.0;  // [m]
  double lookahead_gain = 0.5;  // [s]
};

struct ExpertConfig {
  IdmConfig idm;
  PursuitConfig pursuit;
  double recovery_radius = 12.0;  // max lateral distance from route before off-map [m]
  double signal_horizon = 80.0;   // look-ahead distance for red lights [m]
  ControlBounds bounds;
};

// Per-agent (x, y) positions over T_f future steps.
struct RecoveryTarget {
  std::vector<std::vector<Vec2>> positions;  // [agent][step]
};

namespace detail {

struct LeadInfo {
  double gap = std::numeric_limits<double>::infinity();  // bumper-to-bumper [m]
  double speed = 0.0;
};

inline LeadInfo find_leader(const SceneState& scene, std::size_t agent, const Polyline& path,
                            double ego_arc, const ExpertConfig& cfg) {
  const AgentState& ego = scene.agents[agent];
  LeadInfo best;
  for (std::size_t j = 0; j < scene.agents.size(); ++j) {
    if (j == agent) continue;
    const AgentState& other = scene.agents[j];
    const auto proj = path.project(other.position());
    if (std::abs(proj.lateral) > 1.8) continue;
    const double ahead = proj.arc - ego_arc;
    if (ahead <= 0.0) continue;
    const double gap = ahead - ego.half_length - other.half_length;
    if (gap < best.gap) {
      best.gap = gap;
      best.speed = other.speed;
    }
  }
  // Red stop line acts as a standing leader.
  if (scene.network) {
    const auto stop = scene.network->next_stop_line(ego.route_id, ego_arc);
    if (stop && stop->distance < cfg.signal_horizon && stop->distance > 0.3 &&
        !scene.network->lane_green(stop->lane_id, scene.signals)) {
      const double gap = stop->distance - ego.half_length;
      if (gap < best.gap) {
        best.gap = gap;
        best.speed = 0.0;
      }
    }
  }
  return best;
}

inline double idm_accel(double v, double v0, const LeadInfo& lead, const IdmConfig& idm) {
  double a = 0.0;
  if (v0 > 1e-9) {
    a = idm.a_idm * (1.0 - std::pow(v / v0, idm.exponent));
  } else {
    a = -idm.b * v;  // commanded standstill: brake comfortably to rest
  }
  if (std::isfinite(lead.gap)) {
    const double dv = v - lead.speed;
    const double s_star =
        idm.s0 + std::max(0.0, v * idm.headway + v * dv / (2.0 * std::sqrt(idm.a_idm * idm.b)));
    const double s = std::max(lead.gap, 0.1);
    a -= idm.a_idm * (s_star / s) * (s_star / s);
  }
  return a;
}

}  // namespace detail

// IDM longitudinal rule plus pure-pursuit tracking of the agent's route
// centerline. speed_cap lets a caller lower the desired speed (e.g. for a
// commanded yield or stop) without touching the config.
inline Control expert_control(const SceneState& scene, std::size_t agent, const ExpertConfig& cfg,
                              double speed_cap = std::numeric_limits<double>::infinity()) {
  if (!scene.network) throw OffMapError("scene has no network");
  const AgentState& ego = scene.agents[agent];
  const Polyline& path = scene.network->route_path(ego.route_id);
  const auto proj = path.project(ego.position());
  if (proj.dist > cfg.recovery_radius)
    throw OffMapError("agent " + std::to_string(agent) + " is " + std::to_string(proj.dist) +
                      " m off its route");

  const double limit = scene.network->route_speed_limit(ego.route_id, proj.arc);
  const double v0 = std::min({cfg.idm.v0, limit, speed_cap});
  const auto lead = detail::find_leader(scene, agent, path, proj.arc, cfg);
  const double accel = detail::idm_accel(ego.speed, v0, lead, cfg.idm);

  // Pure pursuit toward a lookahead point on the route.
  const double ld = cfg.pursuit.lookahead_base + cfg.pursuit.lookahead_gain * ego.speed;
  const Vec2 target = path.point_at(std::min(proj.arc + ld, path.length()));
  const Vec2 local = to_frame(target - ego.position(), ego.heading);
  double steer = 0.0;
  const double chord = local.norm();
  if (chord > 1e-6 && local.x > 1e-6) {
    const double curvature = 2.0 * local.y / (chord * chord);
    steer = std::atan(ego.wheelbase * curvature);
  }
  return Control{accel, steer}.clamped(cfg.bounds);
}

// Joint rollout of the expert through the bicycle dynamics over `horizon`
// steps. Positions are the post-step positions (steps t+1 .. t+horizon).
inline RecoveryTarget expert_rollout(const SceneState& scene, std::size_t horizon, double dt,
                                     const ExpertConfig& cfg,
                                     const std::vector<double>& speed_caps = {}) {
  if (horizon < 1) throw ValidationError("expert_rollout horizon must be >= 1");
  RecoveryTarget target;
  target.positions.assign(scene.agents.size(), {});
  SceneState cur = scene;
  for (std::size_t step = 0; step < horizon; ++step) {
    std::vector<Control> controls(cur.agents.size());
    for (std::size_t i = 0; i < cur.agents.size(); ++i) {
      const double cap = i < speed_caps.size() ? speed_caps[i]
                                               : std::numeric_limits<double>::infinity();
      controls[i] = expert_control(cur, i, cfg, cap);
    }
    for (std::size_t i = 0; i < cur.agents.size(); ++i)
      cur.agents[i] = integrate_bicycle(cur.agents[i], controls[i], dt);
    cur.time += dt;
    cur.refresh_signals();
    for (std::size_t i = 0; i < cur.agents.size(); ++i)
      target.positions[i].push_back(cur.agents[i].position());
  }
  return target;
}

}  // namespace hsim
