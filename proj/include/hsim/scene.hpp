#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "hsim/errors.hpp"
#include "hsim/geometry.hpp"
#include "hsim/network.hpp"

namespace hsim {

struct ControlBounds {
  double accel_min = -5.0;  // [m/s^2]
  double accel_max = 3.0;
  double steer_max = 0.5;   // [rad]
};

struct Control {
  double accel = 0.0;
  double steer = 0.0;

  Control clamped(const ControlBounds& b) const {
    return {std::clamp(accel, b.accel_min, b.accel_max),
            std::clamp(steer, -b.steer_max, b.steer_max)};
  }
};

struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;   // wrapped to (-pi, pi]
  double speed = 0.0;     // >= 0
  double wheelbase = 2.5; // > 0
  double half_length = 2.0;
  double half_width = 0.9;
  std::string route_id;

  Vec2 position() const { return {x, y}; }

  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(heading) &&
           std::isfinite(speed) && std::isfinite(wheelbase);
  }
};

// Kinematic bicycle step, usable with plain doubles or tape variables.
// Derivatives are evaluated at the pre-step state (forward Euler); the
// speed floor at zero passes gradient only when inactive.
template <class S>
struct BicyclePose {
  S x, y, heading, speed;
};

inline double floor_zero(double v) { return v < 0.0 ? 0.0 : v; }

template <class S>
BicyclePose<S> bicycle_step(const BicyclePose<S>& p, const S& accel, const S& steer,
                            double wheelbase, double dt) {
  using std::cos;
  using std::sin;
  using std::tan;
  BicyclePose<S> n;
  n.x = p.x + p.speed * cos(p.heading) * dt;
  n.y = p.y + p.speed * sin(p.heading) * dt;
  n.heading = p.heading + p.speed * tan(steer) * (dt / wheelbase);
  n.speed = floor_zero(p.speed + accel * dt);
  return n;
}

inline AgentState integrate_bicycle(const AgentState& state, const Control& u, double dt) {
  if (!state.finite() || !std::isfinite(u.accel) || !std::isfinite(u.steer))
    throw InvalidStateError("non-finite state or control in integrate_bicycle");
  if (dt <= 0.0) throw InvalidStateError("dt must be positive");
  if (state.wheelbase <= 0.0) throw InvalidStateError("wheelbase must be positive");
  BicyclePose<double> p{state.x, state.y, state.heading, state.speed};
  BicyclePose<double> n = bicycle_step(p, u.accel, u.steer, state.wheelbase, dt);
  AgentState out = state;
  out.x = n.x;
  out.y = n.y;
  out.heading = wrap_angle(n.heading);
  out.speed = n.speed;
  return out;
}

// Body footprint approximated by 3 discs along the body axis.
inline double body_disc_radius(const AgentState& a) {
  const double third = a.half_length / 3.0;
  return std::sqrt(third * third + a.half_width * a.half_width);
}

inline std::array<Vec2, 3> body_disc_centers(const AgentState& a) {
  const double off = 2.0 * a.half_length / 3.0;
  const Vec2 axis{std::cos(a.heading), std::sin(a.heading)};
  return {Vec2{a.x - off * axis.x, a.y - off * axis.y}, Vec2{a.x, a.y},
          Vec2{a.x + off * axis.x, a.y + off * axis.y}};
}

inline bool agents_overlap(const AgentState& a, const AgentState& b) {
  const double rsum = body_disc_radius(a) + body_disc_radius(b);
  for (const auto& ca : body_disc_centers(a))
    for (const auto& cb : body_disc_centers(b))
      if (distance(ca, cb) < rsum) return true;
  return false;
}

struct SceneState {
  double time = 0.0;
  std::vector<AgentState> agents;
  const RoadNetwork* network = nullptr;
  std::vector<int> signals;  // per-junction phase index

  void refresh_signals() {
    if (network) signals = network->signal_phases(time);
  }
};

// Sorted lexicographic list of overlapping agent pairs.
inline std::vector<std::pair<int, int>> detect_collisions(const SceneState& scene) {
  std::vector<std::pair<int, int>> out;
  const int n = static_cast<int>(scene.agents.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (agents_overlap(scene.agents[i], scene.agents[j])) out.emplace_back(i, j);
  return out;
}

// Ring of the last T_h scene states, consecutive entries dt apart.
class SceneHistory {
 public:
  SceneHistory(std::size_t capacity, double dt) : capacity_(capacity), dt_(dt) {}

  std::size_t size() const { return window_.size(); }
  std::size_t capacity() const { return capacity_; }
  double dt() const { return dt_; }
  const SceneState& at(std::size_t i) const { return window_[i]; }  // 0 = oldest
  const SceneState& latest() const { return window_.back(); }
  bool empty() const { return window_.empty(); }

  void push(const SceneState& s) {
    if (!window_.empty()) {
      const double gap = s.time - window_.back().time;
      if (std::abs(gap - dt_) > 1e-9)
        throw HistoryDiscontinuityError("scene time gap " + std::to_string(gap) +
                                        " != dt " + std::to_string(dt_));
    }
    window_.push_back(s);
    if (window_.size() > capacity_) window_.pop_front();
  }

 private:
  std::size_t capacity_;
  double dt_;
  std::deque<SceneState> window_;
};

inline SceneHistory push_history(SceneHistory h, const SceneState& s) {
  h.push(s);
  return h;
}

}  // namespace hsim
