#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "hsim/errors.hpp"
#include "hsim/scene.hpp"
#include "hsim/step_record.hpp"

namespace hsim {

inline constexpr double kHardAccelThreshold = 2.5;            // [m/s^2], strict
inline constexpr double kSharpTurnThreshold = 20.0 * M_PI / 180.0;  // [rad/s], strict
inline constexpr double kTtcThreshold = 1.5;                  // [s], strict

struct MetricsReport {
  double avg_speed = 0.0;          // [m/s]
  double hard_accel_per_km = 0.0;
  double sharp_turn_per_km = 0.0;
  double safety_flag_per_km = 0.0;
  double collision_per_km = 0.0;
  double ade = 0.0;                // [m]
  double total_distance = 0.0;     // [km]
  bool zero_distance = false;
};

// Earliest nonnegative time at which the two agents' disc footprints touch
// under constant-velocity projection; +inf if they never do.
inline double compute_ttc(const SceneState& scene, std::size_t i, std::size_t j) {
  const AgentState& a = scene.agents[i];
  const AgentState& b = scene.agents[j];
  const Vec2 va{a.speed * std::cos(a.heading), a.speed * std::sin(a.heading)};
  const Vec2 vb{b.speed * std::cos(b.heading), b.speed * std::sin(b.heading)};
  const Vec2 dv = va - vb;
  const double radius = body_disc_radius(a) + body_disc_radius(b);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& ca : body_disc_centers(a)) {
    for (const auto& cb : body_disc_centers(b)) {
      const Vec2 dp = ca - cb;
      const double c = dp.dot(dp) - radius * radius;
      if (c <= 0.0) return 0.0;  // already in contact
      const double qa = dv.dot(dv);
      if (qa < 1e-12) continue;
      const double qb = 2.0 * dp.dot(dv);
      const double disc = qb * qb - 4.0 * qa * c;
      if (disc < 0.0) continue;
      const double t = (-qb - std::sqrt(disc)) / (2.0 * qa);
      if (t >= 0.0) best = std::min(best, t);
    }
  }
  return best;
}

// Mean Euclidean displacement between two equally shaped position sets.
inline double compute_ade(const std::vector<std::vector<Vec2>>& executed,
                          const std::vector<std::vector<Vec2>>& reference) {
  if (executed.size() != reference.size()) throw ArityError("compute_ade: agent count mismatch");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < executed.size(); ++i) {
    if (executed[i].size() != reference[i].size())
      throw ArityError("compute_ade: step count mismatch");
    for (std::size_t t = 0; t < executed[i].size(); ++t) {
      acc += distance(executed[i][t], reference[i][t]);
      ++count;
    }
  }
  return count > 0 ? acc / static_cast<double>(count) : 0.0;
}

// Streaming metrics over a time-ordered StepRecord stream. Collisions are
// debounced per pair (one event per contiguous contact); hard-accel and
// TTC flags count per agent-step / pair-step with strict thresholds.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(double dt) : dt_(dt) {}

  void add(const StepRecord& rec) {
    if (has_last_time_ && rec.time <= last_time_ + 1e-12)
      throw OrderingError("metrics stream is not time-ordered");
    has_last_time_ = true;
    last_time_ = rec.time;

    SceneState scene;
    scene.time = rec.time;
    for (const auto& ar : rec.agents) scene.agents.push_back(ar.state);

    for (const auto& ar : rec.agents) {
      speed_sum_ += ar.state.speed;
      ++speed_count_;
      distance_m_ += ar.state.speed * dt_;
      if (std::abs(ar.control.accel) > kHardAccelThreshold) ++hard_accel_;
      auto it = last_heading_.find(ar.agent_id);
      if (it != last_heading_.end()) {
        const double rate = std::abs(wrap_angle(ar.state.heading - it->second)) / dt_;
        if (rate > kSharpTurnThreshold) ++sharp_turn_;
      }
      last_heading_[ar.agent_id] = ar.state.heading;
    }

    for (std::size_t i = 0; i < rec.agents.size(); ++i)
      for (std::size_t j = i + 1; j < rec.agents.size(); ++j)
        if (compute_ttc(scene, i, j) < kTtcThreshold) ++safety_flag_;

    std::set<std::pair<int, int>> touching;
    for (const auto& [i, j] : detect_collisions(scene)) {
      const auto key = std::make_pair(rec.agents[static_cast<std::size_t>(i)].agent_id,
                                      rec.agents[static_cast<std::size_t>(j)].agent_id);
      touching.insert(key);
      if (!in_contact_.count(key)) ++collisions_;  // new contact episode
    }
    in_contact_ = std::move(touching);
  }

  void merge(const MetricsAccumulator& o) {
    speed_sum_ += o.speed_sum_;
    speed_count_ += o.speed_count_;
    distance_m_ += o.distance_m_;
    hard_accel_ += o.hard_accel_;
    sharp_turn_ += o.sharp_turn_;
    safety_flag_ += o.safety_flag_;
    collisions_ += o.collisions_;
  }

  MetricsReport report(double ade = 0.0) const {
    MetricsReport r;
    r.avg_speed = speed_count_ > 0 ? speed_sum_ / static_cast<double>(speed_count_) : 0.0;
    r.total_distance = distance_m_ / 1000.0;
    r.zero_distance = r.total_distance <= 0.0;
    const double km = r.zero_distance ? 1.0 : r.total_distance;
    r.hard_accel_per_km = r.zero_distance ? 0.0 : hard_accel_ / km;
    r.sharp_turn_per_km = r.zero_distance ? 0.0 : sharp_turn_ / km;
    r.safety_flag_per_km = r.zero_distance ? 0.0 : safety_flag_ / km;
    r.collision_per_km = r.zero_distance ? 0.0 : collisions_ / km;
    r.ade = ade;
    return r;
  }

  long hard_accel_events() const { return hard_accel_; }
  long sharp_turn_events() const { return sharp_turn_; }
  long safety_flag_events() const { return safety_flag_; }
  long collision_events() const { return collisions_; }

 private:
  double dt_;
  bool has_last_time_ = false;
  double last_time_ = 0.0;
  double speed_sum_ = 0.0;
  long speed_count_ = 0;
  double distance_m_ = 0.0;
  long hard_accel_ = 0;
  long sharp_turn_ = 0;
  long safety_flag_ = 0;
  long collisions_ = 0;
  std::map<int, double> last_heading_;
  std::set<std::pair<int, int>> in_contact_;
};

inline MetricsReport accumulate(const std::vector<StepRecord>& records, double dt,
                                double ade = 0.0) {
  MetricsAccumulator acc(dt);
  for (const auto& r : records) acc.add(r);
  return acc.report(ade);
}

}  // namespace hsim
