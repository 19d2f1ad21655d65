#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hsim/errors.hpp"
#include "hsim/geometry.hpp"
#include "hsim/scene.hpp"

namespace hsim {

enum class Maneuver : int { Maintain = 0, Yield = 1, SwitchLeft = 2, SwitchRight = 3, Stop = 4 };
inline constexpr int kNumManeuvers = 5;

inline const char* maneuver_name(Maneuver m) {
  switch (m) {
    case Maneuver::Maintain: return "maintain";
    case Maneuver::Yield: return "yield";
    case Maneuver::SwitchLeft: return "switch_left";
    case Maneuver::SwitchRight: return "switch_right";
    case Maneuver::Stop: return "stop";
  }
  return "maintain";
}

inline Maneuver maneuver_from_name(const std::string& s) {
  for (int i = 0; i < kNumManeuvers; ++i)
    if (s == maneuver_name(static_cast<Maneuver>(i))) return static_cast<Maneuver>(i);
  throw ValidationError("unknown maneuver '" + s + "'");
}

struct Command {
  Maneuver maneuver = Maneuver::Maintain;
  std::vector<Vec2> waypoints;  // K route-aligned guidance points
};

struct Ordering {
  std::vector<std::size_t> perm;  // perm[rank] = agent index
};

// Featurization constants. kSceneFeatures is the per-agent scene feature
// width; predecessors contribute a summed one-hot maneuver embedding.
inline constexpr int kNeighborCount = 4;
inline constexpr int kSceneFeatures = 8 + 4 * kNeighborCount;
inline constexpr int kHighHidden = 16;
inline constexpr int kHighInput = kSceneFeatures + kNumManeuvers;

struct SubgameState {
  std::vector<double> scene_features;                    // length kSceneFeatures
  std::vector<std::array<double, kNumManeuvers>> slots;  // N-1 slots, zero padded
  std::size_t filled = 0;                                // count of real predecessors
};

// Two-layer scoring network plus a scalar waypoint-offset head, flat-indexed.
struct HighParamLayout {
  int w1 = 0;                                  // [kHighHidden x kHighInput]
  int b1 = kHighHidden * kHighInput;
  int w2 = b1 + kHighHidden;                   // [kNumManeuvers x kHighHidden]
  int b2 = w2 + kNumManeuvers * kHighHidden;
  int w_off = b2 + kNumManeuvers;              // [kHighHidden]
  int b_off = w_off + kHighHidden;
  int total = b_off + 1;
};

using HighPolicyParams = std::vector<double>;

inline HighPolicyParams init_high_params(std::uint64_t seed, double scale = 0.1) {
  HighParamLayout L;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  HighPolicyParams p(static_cast<std::size_t>(L.total));
  for (auto& v : p) v = dist(rng);
  return p;
}

inline Ordering make_ordering(const SceneState& scene) {
  Ordering ord;
  ord.perm.resize(scene.agents.size());
  std::iota(ord.perm.begin(), ord.perm.end(), 0);
  std::vector<double> dist(scene.agents.size(), std::numeric_limits<double>::infinity());
  if (scene.network)
    for (std::size_t i = 0; i < scene.agents.size(); ++i)
      dist[i] = scene.network->distance_to_conflict(scene.agents[i].position());
  std::stable_sort(ord.perm.begin(), ord.perm.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  return ord;
}

// Scene features for one agent: kinematics relative to its route, signal
// context, and the k nearest neighbors in the ego frame.
inline std::vector<double> build_scene_features(const SceneState& scene, std::size_t agent) {
  const AgentState& ego = scene.agents[agent];
  std::vector<double> f(kSceneFeatures, 0.0);
  f[0] = ego.speed / 15.0;
  double limit = 13.9;
  if (scene.network) {
    const Polyline& path = scene.network->route_path(ego.route_id);
    const auto proj = path.project(ego.position());
    limit = scene.network->route_speed_limit(ego.route_id, proj.arc);
    f[1] = std::clamp(proj.lateral, -5.0, 5.0) / 5.0;
    const double herr = wrap_angle(ego.heading - path.heading_at(proj.arc));
    f[2] = std::cos(herr);
    f[3] = std::sin(herr);
    f[5] = std::min(scene.network->distance_to_conflict(ego.position()), 50.0) / 50.0;
    const auto stop = scene.network->next_stop_line(ego.route_id, proj.arc);
    if (stop) {
      f[6] = scene.network->lane_green(stop->lane_id, scene.signals) ? 1.0 : 0.0;
      f[7] = std::min(stop->distance, 80.0) / 80.0;
    } else {
      f[6] = 1.0;
      f[7] = 1.0;
    }
  } else {
    f[2] = 1.0;
    f[5] = 1.0;
    f[6] = 1.0;
    f[7] = 1.0;
  }
  f[4] = (limit - ego.speed) / 15.0;

  // k-nearest neighbors sorted by distance, ties by distance only (the sort
  // key is purely geometric, so scene order never leaks in).
  struct Nb {
    double d;
    Vec2 rel;
    double dv;
  };
  std::vector<Nb> nbs;
  for (std::size_t j = 0; j < scene.agents.size(); ++j) {
    if (j == agent) continue;
    const AgentState& o = scene.agents[j];
    const Vec2 rel = to_frame(o.position() - ego.position(), ego.heading);
    nbs.push_back({rel.norm(), rel, o.speed - ego.speed});
  }
  std::stable_sort(nbs.begin(), nbs.end(), [](const Nb& a, const Nb& b) { return a.d < b.d; });
  for (int k = 0; k < kNeighborCount && k < static_cast<int>(nbs.size()); ++k) {
    const int base = 8 + 4 * k;
    f[base + 0] = std::clamp(nbs[k].rel.x, -30.0, 30.0) / 30.0;
    f[base + 1] = std::clamp(nbs[k].rel.y, -30.0, 30.0) / 30.0;
    f[base + 2] = std::clamp(nbs[k].dv, -15.0, 15.0) / 15.0;
    f[base + 3] = 1.0 / (1.0 + nbs[k].d);
  }
  return f;
}

inline SubgameState build_subgame_state(const SceneState& scene, const SceneHistory& /*history*/,
                                        const Ordering& ordering,
                                        const std::vector<Command>& preceding, std::size_t rank) {
  if (preceding.size() != rank)
    throw ArityError("expected " + std::to_string(rank) + " preceding commands, got " +
                     std::to_string(preceding.size()));
  SubgameState s;
  s.scene_features = build_scene_features(scene, ordering.perm[rank]);
  const std::size_t n = scene.agents.size();
  s.slots.assign(n > 0 ? n - 1 : 0, {});
  for (std::size_t k = 0; k < preceding.size(); ++k)
    s.slots[k][static_cast<int>(preceding[k].maneuver)] = 1.0;
  s.filled = preceding.size();
  return s;
}

namespace detail {

struct HighForward {
  std::vector<double> input;   // kHighInput
  std::vector<double> hidden;  // kHighHidden (post-tanh)
  std::array<double, kNumManeuvers> logits;
  std::array<double, kNumManeuvers> probs;
  double offset = 0.0;  // lateral waypoint offset [m]
};

inline HighForward high_forward(const SubgameState& s, const HighPolicyParams& p) {
  HighParamLayout L;
  HighForward fwd;
  fwd.input.assign(kHighInput, 0.0);
  std::copy(s.scene_features.begin(), s.scene_features.end(), fwd.input.begin());
  for (const auto& slot : s.slots)
    for (int m = 0; m < kNumManeuvers; ++m) fwd.input[kSceneFeatures + m] += slot[m];
  fwd.hidden.assign(kHighHidden, 0.0);
  for (int h = 0; h < kHighHidden; ++h) {
    double acc = p[L.b1 + h];
    for (int i = 0; i < kHighInput; ++i) acc += p[L.w1 + h * kHighInput + i] * fwd.input[i];
    fwd.hidden[h] = std::tanh(acc);
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (int m = 0; m < kNumManeuvers; ++m) {
    double acc = p[L.b2 + m];
    for (int h = 0; h < kHighHidden; ++h) acc += p[L.w2 + m * kHighHidden + h] * fwd.hidden[h];
    fwd.logits[m] = acc;
    mx = std::max(mx, acc);
  }
  double z = 0.0;
  for (int m = 0; m < kNumManeuvers; ++m) z += std::exp(fwd.logits[m] - mx);
  for (int m = 0; m < kNumManeuvers; ++m) fwd.probs[m] = std::exp(fwd.logits[m] - mx) / z;
  double off = p[L.b_off];
  for (int h = 0; h < kHighHidden; ++h) off += p[L.w_off + h] * fwd.hidden[h];
  fwd.offset = 1.5 * std::tanh(off);
  return fwd;
}

// Accumulates d log pi(m | s) / d params into grad.
inline void high_logprob_backward(const SubgameState& s, const HighPolicyParams& p, int maneuver,
                                  double weight, std::vector<double>& grad) {
  HighParamLayout L;
  const HighForward fwd = high_forward(s, p);
  std::array<double, kNumManeuvers> dlogits;
  for (int m = 0; m < kNumManeuvers; ++m)
    dlogits[m] = ((m == maneuver ? 1.0 : 0.0) - fwd.probs[m]) * weight;
  std::vector<double> dh(kHighHidden, 0.0);
  for (int m = 0; m < kNumManeuvers; ++m) {
    grad[L.b2 + m] += dlogits[m];
    for (int h = 0; h < kHighHidden; ++h) {
      grad[L.w2 + m * kHighHidden + h] += dlogits[m] * fwd.hidden[h];
      dh[h] += p[L.w2 + m * kHighHidden + h] * dlogits[m];
    }
  }
  for (int h = 0; h < kHighHidden; ++h) {
    const double dpre = dh[h] * (1.0 - fwd.hidden[h] * fwd.hidden[h]);
    grad[L.b1 + h] += dpre;
    for (int i = 0; i < kHighInput; ++i) grad[L.w1 + h * kHighInput + i] += dpre * fwd.input[i];
  }
}

}  // namespace detail

inline std::array<double, kNumManeuvers> maneuver_distribution(const SubgameState& s,
                                                               const HighPolicyParams& p) {
  return detail::high_forward(s, p).probs;
}

inline double maneuver_speed_cap(Maneuver m, double lane_limit) {
  switch (m) {
    case Maneuver::Yield: return 0.4 * lane_limit;
    case Maneuver::Stop: return 0.0;
    default: return std::numeric_limits<double>::infinity();
  }
}

// Deterministic waypoint guidance: K points at fixed arc spacing along the
// commanded lane, shifted laterally by the offset-head output. Switch
// maneuvers target the neighbor lane when one exists.
inline std::vector<Vec2> make_waypoints(const SceneState& scene, std::size_t agent, Maneuver m,
                                        double lateral_offset, int count = 4,
                                        double spacing = 5.0) {
  std::vector<Vec2> wps;
  const AgentState& ego = scene.agents[agent];
  if (!scene.network) {
    const Vec2 dir{std::cos(ego.heading), std::sin(ego.heading)};
    for (int k = 1; k <= count; ++k) wps.push_back(ego.position() + dir * (spacing * k));
    return wps;
  }
  const RoadNetwork& net = *scene.network;
  const Polyline* path = &net.route_path(ego.route_id);
  if (m == Maneuver::SwitchLeft || m == Maneuver::SwitchRight) {
    const auto proj = path->project(ego.position());
    // Take the neighbor of the lane under the agent if the route has one.
    const Route& r = net.find_route(ego.route_id);
    double acc = 0.0;
    for (const auto& lid : r.lanes) {
      const Lane& l = net.find_lane(lid);
      acc += l.centerline.length();
      if (proj.arc <= acc) {
        const std::string& nb = m == Maneuver::SwitchLeft ? l.left : l.right;
        if (!nb.empty()) path = &net.find_lane(nb).centerline;
        break;
      }
    }
  }
  const auto proj = path->project(ego.position());
  for (int k = 1; k <= count; ++k) {
    const double s = std::min(proj.arc + spacing * k, path->length());
    const Vec2 pt = path->point_at(s);
    const double th = path->heading_at(s);
    wps.push_back({pt.x - std::sin(th) * lateral_offset, pt.y + std::cos(th) * lateral_offset});
  }
  return wps;
}

struct CommandSample {
  std::vector<Command> commands;   // indexed by agent, not by rank
  std::vector<double> log_probs;   // per-agent conditional maneuver log-prob
};

// Autoregressive command sampling in ordering H; each agent conditions on
// all preceding commands through its sub-game state.
inline CommandSample sample_commands(const SceneState& scene, const SceneHistory& history,
                                     const HighPolicyParams& params, const Ordering& ordering,
                                     std::mt19937_64& rng, int waypoint_count = 4) {
  CommandSample out;
  out.commands.resize(scene.agents.size());
  out.log_probs.assign(scene.agents.size(), 0.0);
  std::vector<Command> preceding;
  for (std::size_t rank = 0; rank < ordering.perm.size(); ++rank) {
    const std::size_t agent = ordering.perm[rank];
    const SubgameState sub = build_subgame_state(scene, history, ordering, preceding, rank);
    const auto fwd = detail::high_forward(sub, params);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double u = uni(rng);
    double cum = 0.0;
    int choice = kNumManeuvers - 1;
    for (int m = 0; m < kNumManeuvers; ++m) {
      cum += fwd.probs[m];
      if (u < cum) {
        choice = m;
        break;
      }
    }
    Command cmd;
    cmd.maneuver = static_cast<Maneuver>(choice);
    cmd.waypoints = make_waypoints(scene, agent, cmd.maneuver, fwd.offset, waypoint_count);
    out.commands[agent] = cmd;
    out.log_probs[agent] = std::log(fwd.probs[choice]);
    preceding.push_back(cmd);
  }
  return out;
}

// Sum of per-agent conditional maneuver log-probs for a given joint command.
inline double joint_log_prob(const SceneState& scene, const SceneHistory& history,
                             const HighPolicyParams& params, const Ordering& ordering,
                             const std::vector<Command>& commands) {
  if (commands.size() != scene.agents.size())
    throw ArityError("joint_log_prob: command count != agent count");
  double total = 0.0;
  std::vector<Command> preceding;
  for (std::size_t rank = 0; rank < ordering.perm.size(); ++rank) {
    const std::size_t agent = ordering.perm[rank];
    const SubgameState sub = build_subgame_state(scene, history, ordering, preceding, rank);
    const auto probs = maneuver_distribution(sub, params);
    total += std::log(probs[static_cast<int>(commands[agent].maneuver)]);
    preceding.push_back(commands[agent]);
  }
  return total;
}

inline double episode_return(const std::vector<double>& rewards, double gamma) {
  if (gamma < 0.0 || gamma > 1.0) throw ValidationError("gamma must be in [0, 1]");
  double g = 1.0, total = 0.0;
  for (double r : rewards) {
    total += g * r;
    g *= gamma;
  }
  return total;
}

// One REINFORCE trajectory: the sub-game states visited, the maneuvers
// chosen there, and the discounted episode return.
struct HighTrajectory {
  std::vector<SubgameState> states;
  std::vector<int> maneuvers;
  double ret = 0.0;
};

// REINFORCE ascent step with a mean-return baseline.
inline HighPolicyParams reinforce_update(const HighPolicyParams& params,
                                         const std::vector<HighTrajectory>& batch,
                                         double step_size) {
  if (batch.empty()) throw ValidationError("reinforce_update: empty batch");
  double baseline = 0.0;
  for (const auto& tr : batch) baseline += tr.ret;
  baseline /= static_cast<double>(batch.size());
  std::vector<double> grad(params.size(), 0.0);
  for (const auto& tr : batch) {
    const double adv = tr.ret - baseline;
    if (adv == 0.0) continue;
    for (std::size_t t = 0; t < tr.states.size(); ++t)
      detail::high_logprob_backward(tr.states[t], params, tr.maneuvers[t],
                                    adv / static_cast<double>(batch.size()), grad);
  }
  HighPolicyParams next = params;
  for (std::size_t i = 0; i < next.size(); ++i) {
    next[i] += step_size * grad[i];
    if (!std::isfinite(next[i])) throw DivergenceError("non-finite high-policy parameter");
  }
  return next;
}

}  // namespace hsim
