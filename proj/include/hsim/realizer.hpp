#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "hsim/errors.hpp"
#include "hsim/expert.hpp"
#include "hsim/geometry.hpp"
#include "hsim/policy_high.hpp"
#include "hsim/scene.hpp"
#include "hsim/tape.hpp"

namespace hsim {

struct RealizerDims {
  int d_z = 32;   // scene latent width
  int d_c = 16;   // intention embedding width
  int t_h = 10;   // history horizon
  int t_f = 8;    // rollout horizon
  int waypoints = 4;
};

inline constexpr int kHistFeat = 6;  // dx, dy, cos dth, sin dth, v, valid
inline constexpr int kMapFeat = 10;

// Flat offsets into RealizerParams for every block.
struct RealizerLayout {
  int w_hist, b_hist, w_attn_t;
  int w_map, b_map;
  int wq_e, wk_e, wv_e, wo_e;
  int emb_man, w_wp, b_int;
  int w_dz, w_dc, b_d;
  int wq_x, wk_x, wv_x, wo_x;
  int wq_s, wk_s, wv_s, wo_s;
  int w_out, b_out;
  int total;

  explicit RealizerLayout(const RealizerDims& d) {
    int o = 0;
    auto take = [&o](int n) {
      int at = o;
      o += n;
      return at;
    };
    const int dz = d.d_z, dc = d.d_c;
    w_hist = take(dz * kHistFeat);
    b_hist = take(dz);
    w_attn_t = take(dz);
    w_map = take(dz * kMapFeat);
    b_map = take(dz);
    wq_e = take(dz * dz);
    wk_e = take(dz * dz);
    wv_e = take(dz * dz);
    wo_e = take(dz * dz);
    emb_man = take(kNumManeuvers * dc);
    w_wp = take(dc * 2 * d.waypoints);
    b_int = take(dc);
    w_dz = take(dz * dz);
    w_dc = take(dz * dc);
    b_d = take(dz);
    wq_x = take(dz * dz);
    wk_x = take(dz * dz);
    wv_x = take(dz * dz);
    wo_x = take(dz * dz);
    wq_s = take(dz * dz);
    wk_s = take(dz * dz);
    wv_s = take(dz * dz);
    wo_s = take(dz * dz);
    w_out = take(2 * d.t_f * dz);
    b_out = take(2 * d.t_f);
    total = o;
  }
};

using RealizerParams = std::vector<double>;

inline RealizerParams init_realizer_params(const RealizerDims& dims, std::uint64_t seed,
                                           double scale = 0.1) {
  RealizerLayout L(dims);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  RealizerParams p(static_cast<std::size_t>(L.total));
  for (auto& v : p) v = dist(rng);
  return p;
}

struct SceneLatent {
  std::vector<std::vector<double>> z;  // [agent][d_z]
};

struct IntentionEmbedding {
  std::vector<double> c;  // [d_c]
};

struct ControlRollout {
  std::vector<std::vector<Control>> controls;  // [agent][t_f]
};

namespace rnet {

// Generic dense kernels over the forward scalar type (double or Var).
template <class S, class P>
std::vector<S> linear(const P& p, int w_off, int b_off, int rows, int cols,
                      const std::vector<S>& x) {
  std::vector<S> out;
  out.reserve(rows);
  for (int r = 0; r < rows; ++r) {
    S acc = p[b_off + r];
    for (int c = 0; c < cols; ++c) acc = acc + p[w_off + r * cols + c] * x[c];
    out.push_back(acc);
  }
  return out;
}

template <class S, class P>
std::vector<S> matvec(const P& p, int w_off, int rows, int cols, const std::vector<S>& x) {
  std::vector<S> out;
  out.reserve(rows);
  for (int r = 0; r < rows; ++r) {
    S acc = p[w_off + r * cols] * x[0];
    for (int c = 1; c < cols; ++c) acc = acc + p[w_off + r * cols + c] * x[c];
    out.push_back(acc);
  }
  return out;
}

template <class S>
std::vector<S> tanh_vec(std::vector<S> x) {
  using std::tanh;
  for (auto& v : x) v = tanh(v);
  return x;
}

template <class S>
std::vector<S> softmax(const std::vector<S>& scores) {
  using std::exp;
  std::size_t arg = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (value_of(scores[i]) > value_of(scores[arg])) arg = i;
  std::vector<S> e;
  e.reserve(scores.size());
  S z = exp(scores[0] - scores[arg]);
  e.push_back(z);
  for (std::size_t i = 1; i < scores.size(); ++i) {
    e.push_back(exp(scores[i] - scores[arg]));
    z = z + e.back();
  }
  for (auto& v : e) v = v / z;
  return e;
}

template <class S>
S dot(const std::vector<S>& a, const std::vector<S>& b) {
  S acc = a[0] * b[0];
  for (std::size_t i = 1; i < a.size(); ++i) acc = acc + a[i] * b[i];
  return acc;
}

// Single-head scaled dot-product attention; queries from `qs`, keys/values
// from `ks`. Returns one context vector per query.
template <class S, class P>
std::vector<std::vector<S>> attention(const P& p, int wq, int wk, int wv, int dz,
                                      const std::vector<std::vector<S>>& qs,
                                      const std::vector<std::vector<S>>& ks) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dz));
  std::vector<std::vector<S>> keys, vals;
  for (const auto& k : ks) {
    keys.push_back(matvec(p, wk, dz, dz, k));
    vals.push_back(matvec(p, wv, dz, dz, k));
  }
  std::vector<std::vector<S>> out;
  for (const auto& q : qs) {
    auto qq = matvec(p, wq, dz, dz, q);
    std::vector<S> scores;
    scores.reserve(keys.size());
    for (const auto& k : keys) scores.push_back(dot(qq, k) * inv_sqrt);
    auto w = softmax(scores);
    std::vector<S> ctx(static_cast<std::size_t>(dz), w[0] * vals[0][0]);
    for (int d = 0; d < dz; ++d) {
      S acc = w[0] * vals[0][d];
      for (std::size_t j = 1; j < vals.size(); ++j) acc = acc + w[j] * vals[j][d];
      ctx[static_cast<std::size_t>(d)] = acc;
    }
    out.push_back(std::move(ctx));
  }
  return out;
}

// History features for one agent relative to its latest pose (ego frame).
inline std::vector<std::vector<double>> history_features(const SceneHistory& history,
                                                         std::size_t agent, int t_h) {
  const AgentState& cur = history.latest().agents[agent];
  std::vector<std::vector<double>> feats(static_cast<std::size_t>(t_h),
                                         std::vector<double>(kHistFeat, 0.0));
  const int have = static_cast<int>(history.size());
  for (int t = 0; t < t_h; ++t) {
    const int src = have - t_h + t;  // oldest-padded alignment
    if (src < 0) continue;
    const auto& s = history.at(static_cast<std::size_t>(src));
    if (agent >= s.agents.size()) continue;
    const AgentState& a = s.agents[agent];
    if (!a.finite()) throw InvalidStateError("non-finite agent state in history");
    const Vec2 rel = to_frame(a.position() - cur.position(), cur.heading);
    auto& f = feats[static_cast<std::size_t>(t)];
    f[0] = rel.x / 30.0;
    f[1] = rel.y / 30.0;
    const double dth = wrap_angle(a.heading - cur.heading);
    f[2] = std::cos(dth);
    f[3] = std::sin(dth);
    f[4] = a.speed / 15.0;
    f[5] = 1.0;
  }
  return feats;
}

// Map and nearest-neighbor context per agent.
inline std::vector<double> map_features(const SceneState& scene, std::size_t agent) {
  const AgentState& ego = scene.agents[agent];
  std::vector<double> f(kMapFeat, 0.0);
  if (scene.network) {
    const Polyline& path = scene.network->route_path(ego.route_id);
    const auto proj = path.project(ego.position());
    f[0] = std::clamp(proj.lateral, -5.0, 5.0) / 5.0;
    const double herr = wrap_angle(ego.heading - path.heading_at(proj.arc));
    f[1] = std::cos(herr);
    f[2] = std::sin(herr);
    f[3] = (scene.network->route_speed_limit(ego.route_id, proj.arc) - ego.speed) / 15.0;
    const auto stop = scene.network->next_stop_line(ego.route_id, proj.arc);
    f[4] = !stop || scene.network->lane_green(stop->lane_id, scene.signals) ? 1.0 : 0.0;
    f[5] = stop ? std::min(stop->distance, 80.0) / 80.0 : 1.0;
  } else {
    f[1] = 1.0;
    f[4] = 1.0;
    f[5] = 1.0;
  }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < scene.agents.size(); ++j) {
    if (j == agent) continue;
    const AgentState& o = scene.agents[j];
    const Vec2 rel = to_frame(o.position() - ego.position(), ego.heading);
    const double d = rel.norm();
    if (d < best) {
      best = d;
      f[6] = std::clamp(rel.x, -30.0, 30.0) / 30.0;
      f[7] = std::clamp(rel.y, -30.0, 30.0) / 30.0;
      f[8] = std::clamp(o.speed - ego.speed, -15.0, 15.0) / 15.0;
      f[9] = 1.0 / (1.0 + d);
    }
  }
  return f;
}

// Waypoints in the agent's ego frame, flattened.
inline std::vector<double> waypoint_features(const AgentState& agent, const Command& cmd,
                                             int count) {
  std::vector<double> f(static_cast<std::size_t>(2 * count), 0.0);
  for (int k = 0; k < count && k < static_cast<int>(cmd.waypoints.size()); ++k) {
    const Vec2 rel = to_frame(cmd.waypoints[static_cast<std::size_t>(k)] - agent.position(),
                              agent.heading);
    f[static_cast<std::size_t>(2 * k)] = std::clamp(rel.x, -40.0, 40.0) / 40.0;
    f[static_cast<std::size_t>(2 * k + 1)] = std::clamp(rel.y, -40.0, 40.0) / 40.0;
  }
  return f;
}

template <class S, class P>
std::vector<S> lift(const P&, const std::vector<double>& x);

template <>
inline std::vector<double> lift<double, std::vector<double>>(const std::vector<double>&,
                                                             const std::vector<double>& x) {
  return x;
}

template <>
inline std::vector<Var> lift<Var, std::vector<Var>>(const std::vector<Var>& p,
                                                    const std::vector<double>& x) {
  std::vector<Var> out;
  out.reserve(x.size());
  for (double v : x) out.emplace_back(*p[0].tape, v);
  return out;
}

// f_enc: per-step linear + temporal attention pool + map projection, then
// one agent-to-agent attention block. One latent per agent.
template <class S, class P>
std::vector<std::vector<S>> encode_scene_t(const P& p, const RealizerDims& dims,
                                           const SceneHistory& history) {
  RealizerLayout L(dims);
  const SceneState& latest = history.latest();
  const std::size_t n = latest.agents.size();
  std::vector<std::vector<S>> tokens;
  for (std::size_t i = 0; i < n; ++i) {
    const auto hist = history_features(history, i, dims.t_h);
    std::vector<std::vector<S>> steps;
    std::vector<S> scores;
    for (const auto& hf : hist) {
      auto x = lift<S>(p, hf);
      auto e = tanh_vec(linear(p, L.w_hist, L.b_hist, dims.d_z, kHistFeat, x));
      std::vector<S> w;
      w.reserve(static_cast<std::size_t>(dims.d_z));
      for (int d = 0; d < dims.d_z; ++d) w.push_back(p[L.w_attn_t + d]);
      scores.push_back(dot(w, e));
      steps.push_back(std::move(e));
    }
    auto alpha = softmax(scores);
    std::vector<S> pooled;
    pooled.reserve(static_cast<std::size_t>(dims.d_z));
    for (int d = 0; d < dims.d_z; ++d) {
      S acc = alpha[0] * steps[0][static_cast<std::size_t>(d)];
      for (std::size_t t = 1; t < steps.size(); ++t)
        acc = acc + alpha[t] * steps[t][static_cast<std::size_t>(d)];
      pooled.push_back(acc);
    }
    auto mf = lift<S>(p, map_features(latest, i));
    auto m = linear(p, L.w_map, L.b_map, dims.d_z, kMapFeat, mf);
    std::vector<S> tok;
    tok.reserve(static_cast<std::size_t>(dims.d_z));
    using std::tanh;
    for (int d = 0; d < dims.d_z; ++d)
      tok.push_back(tanh(pooled[static_cast<std::size_t>(d)] + m[static_cast<std::size_t>(d)]));
    tokens.push_back(std::move(tok));
  }
  auto ctx = attention(p, L.wq_e, L.wk_e, L.wv_e, dims.d_z, tokens, tokens);
  std::vector<std::vector<S>> z;
  using std::tanh;
  for (std::size_t i = 0; i < n; ++i) {
    auto o = matvec(p, L.wo_e, dims.d_z, dims.d_z, ctx[i]);
    std::vector<S> zi;
    zi.reserve(static_cast<std::size_t>(dims.d_z));
    for (int d = 0; d < dims.d_z; ++d)
      zi.push_back(tanh(tokens[i][static_cast<std::size_t>(d)] + o[static_cast<std::size_t>(d)]));
    z.push_back(std::move(zi));
  }
  return z;
}

// Intention encoder: maneuver embedding row + projected ego-frame waypoints.
template <class S, class P>
std::vector<std::vector<S>> encode_intent_t(const P& p, const RealizerDims& dims,
                                            const SceneState& scene,
                                            const std::vector<Command>& commands) {
  RealizerLayout L(dims);
  std::vector<std::vector<S>> out;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    const int m = static_cast<int>(commands[i].maneuver);
    auto wf = lift<S>(p, waypoint_features(scene.agents[i], commands[i], dims.waypoints));
    auto proj = matvec(p, L.w_wp, dims.d_c, 2 * dims.waypoints, wf);
    std::vector<S> c;
    c.reserve(static_cast<std::size_t>(dims.d_c));
    for (int d = 0; d < dims.d_c; ++d)
      c.push_back(p[L.emb_man + m * dims.d_c + d] + proj[static_cast<std::size_t>(d)] +
                  p[L.b_int + d]);
    out.push_back(std::move(c));
  }
  return out;
}

// f_dec: command injection, cross-attention over the scene latent,
// self-attention over decoder states, linear head to 2*T_f raw controls.
template <class S, class P>
std::vector<std::vector<S>> decode_raw_t(const P& p, const RealizerDims& dims,
                                         const std::vector<std::vector<S>>& z,
                                         const std::vector<std::vector<S>>& intents,
                                         bool passive) {
  RealizerLayout L(dims);
  const std::size_t n = z.size();
  if (!passive && intents.size() != n) throw ArityError("latent/intent slot mismatch");
  using std::tanh;
  std::vector<std::vector<S>> d0;
  for (std::size_t i = 0; i < n; ++i) {
    auto a = matvec(p, L.w_dz, dims.d_z, dims.d_z, z[i]);
    std::vector<S> pre;
    pre.reserve(static_cast<std::size_t>(dims.d_z));
    for (int d = 0; d < dims.d_z; ++d) pre.push_back(a[static_cast<std::size_t>(d)] + p[L.b_d + d]);
    if (!passive) {
      auto b = matvec(p, L.w_dc, dims.d_z, dims.d_c, intents[i]);
      for (int d = 0; d < dims.d_z; ++d)
        pre[static_cast<std::size_t>(d)] = pre[static_cast<std::size_t>(d)] +
                                           b[static_cast<std::size_t>(d)];
    }
    d0.push_back(tanh_vec(std::move(pre)));
  }
  auto xctx = attention(p, L.wq_x, L.wk_x, L.wv_x, dims.d_z, d0, z);
  std::vector<std::vector<S>> d1;
  for (std::size_t i = 0; i < n; ++i) {
    auto o = matvec(p, L.wo_x, dims.d_z, dims.d_z, xctx[i]);
    std::vector<S> v;
    v.reserve(static_cast<std::size_t>(dims.d_z));
    for (int d = 0; d < dims.d_z; ++d)
      v.push_back(tanh(d0[i][static_cast<std::size_t>(d)] + o[static_cast<std::size_t>(d)]));
    d1.push_back(std::move(v));
  }
  auto sctx = attention(p, L.wq_s, L.wk_s, L.wv_s, dims.d_z, d1, d1);
  std::vector<std::vector<S>> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto o = matvec(p, L.wo_s, dims.d_z, dims.d_z, sctx[i]);
    std::vector<S> d2;
    d2.reserve(static_cast<std::size_t>(dims.d_z));
    for (int d = 0; d < dims.d_z; ++d)
      d2.push_back(tanh(d1[i][static_cast<std::size_t>(d)] + o[static_cast<std::size_t>(d)]));
    out.push_back(linear(p, L.w_out, L.b_out, 2 * dims.t_f, dims.d_z, d2));
  }
  return out;
}

template <class S>
std::vector<std::vector<std::array<S, 2>>> clamp_rollout(
    const std::vector<std::vector<S>>& raw, int t_f, const ControlBounds& b) {
  std::vector<std::vector<std::array<S, 2>>> out;
  for (const auto& r : raw) {
    std::vector<std::array<S, 2>> agent;
    for (int t = 0; t < t_f; ++t)
      agent.push_back({clamp_st(r[static_cast<std::size_t>(2 * t)], b.accel_min, b.accel_max),
                       clamp_st(r[static_cast<std::size_t>(2 * t + 1)], -b.steer_max, b.steer_max)});
    out.push_back(std::move(agent));
  }
  return out;
}

template <class S>
S wrap_angle_t(const S& a) {
  const double shift = wrap_angle(value_of(a)) - value_of(a);
  return a + shift;
}

// Differentiable rollout of the clamped controls through the bicycle model.
template <class S, class P>
std::vector<std::vector<std::array<S, 2>>> rollout_positions_t(
    const P& p, const SceneState& scene,
    const std::vector<std::vector<std::array<S, 2>>>& controls, double dt) {
  std::vector<std::vector<std::array<S, 2>>> pos;
  for (std::size_t i = 0; i < scene.agents.size(); ++i) {
    const AgentState& a = scene.agents[i];
    auto init = lift<S>(p, {a.x, a.y, a.heading, a.speed});
    BicyclePose<S> cur{init[0], init[1], init[2], init[3]};
    std::vector<std::array<S, 2>> traj;
    for (const auto& u : controls[i]) {
      cur = bicycle_step(cur, u[0], u[1], a.wheelbase, dt);
      cur.heading = wrap_angle_t(cur.heading);
      traj.push_back({cur.x, cur.y});
    }
    pos.push_back(std::move(traj));
  }
  return pos;
}

template <class S, class P>
S loss_traj_t(const P& p, const std::vector<std::vector<std::array<S, 2>>>& pred,
              const RecoveryTarget& target, const std::vector<std::vector<double>>& gates) {
  if (pred.size() != target.positions.size()) throw ArityError("loss_traj: agent count mismatch");
  auto zero = lift<S>(p, {0.0});
  S acc = zero[0];
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != target.positions[i].size())
      throw ArityError("loss_traj: step count mismatch");
    for (std::size_t t = 0; t < pred[i].size(); ++t) {
      const S dx = pred[i][t][0] - target.positions[i][t].x;
      const S dy = pred[i][t][1] - target.positions[i][t].y;
      acc = acc + gates[i][t] * (dx * dx + dy * dy);
      ++count;
    }
  }
  return count > 0 ? acc / static_cast<double>(count) : acc;
}

template <class S, class P>
S loss_smooth_t(const P& p, const std::vector<std::vector<std::array<S, 2>>>& controls) {
  auto zero = lift<S>(p, {0.0});
  S acc = zero[0];
  std::size_t count = 0;
  for (const auto& agent : controls) {
    for (std::size_t t = 0; t + 1 < agent.size(); ++t) {
      const S da = agent[t + 1][0] - agent[t][0];
      const S ds = agent[t + 1][1] - agent[t][1];
      acc = acc + da * da + ds * ds;
      ++count;
    }
  }
  return count > 0 ? acc / static_cast<double>(count) : acc;
}

template <class S, class P>
S loss_coll_t(const P& p, const std::vector<std::vector<std::array<S, 2>>>& pred,
              const std::vector<double>& radii, double margin = 0.5) {
  using std::sqrt;
  auto zero = lift<S>(p, {0.0});
  S acc = zero[0];
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = i + 1; j < pred.size(); ++j) {
      const double d_safe = radii[i] + radii[j] + margin;
      for (std::size_t t = 0; t < pred[i].size(); ++t) {
        const S dx = pred[i][t][0] - pred[j][t][0];
        const S dy = pred[i][t][1] - pred[j][t][1];
        const S dist = sqrt(dx * dx + dy * dy + 1e-12);
        if (value_of(dist) < d_safe) {
          const S gap = d_safe - dist;
          acc = acc + gap * gap;
        }
      }
    }
  }
  return acc;
}

}  // namespace rnet

// ---- Public double-precision surface ----

inline SceneLatent encode_scene(const SceneHistory& history, const RealizerParams& params,
                                const RealizerDims& dims) {
  if (history.empty()) throw InvalidStateError("encode_scene: empty history");
  return SceneLatent{rnet::encode_scene_t<double>(params, dims, history)};
}

inline std::vector<IntentionEmbedding> encode_intent(const SceneState& scene,
                                                     const std::vector<Command>& commands,
                                                     const RealizerParams& params,
                                                     const RealizerDims& dims) {
  if (commands.size() != scene.agents.size())
    throw ArityError("encode_intent: command count != agent count");
  auto raw = rnet::encode_intent_t<double>(params, dims, scene, commands);
  std::vector<IntentionEmbedding> out;
  for (auto& c : raw) out.push_back({std::move(c)});
  return out;
}

inline ControlRollout decode_controls(const SceneLatent& z,
                                      const std::vector<IntentionEmbedding>& intents,
                                      const RealizerParams& params, const RealizerDims& dims,
                                      const ControlBounds& bounds, bool passive = false) {
  std::vector<std::vector<double>> cvecs;
  for (const auto& e : intents) cvecs.push_back(e.c);
  auto raw = rnet::decode_raw_t<double>(params, dims, z.z, cvecs, passive);
  auto clamped = rnet::clamp_rollout(raw, dims.t_f, bounds);
  ControlRollout out;
  for (auto& agent : clamped) {
    std::vector<Control> seq;
    for (auto& u : agent) seq.push_back({u[0], u[1]});
    out.controls.push_back(std::move(seq));
  }
  return out;
}

inline std::vector<std::vector<Vec2>> rollout_positions(const SceneState& scene,
                                                        const ControlRollout& rollout,
                                                        double dt) {
  std::vector<std::vector<Vec2>> out;
  for (std::size_t i = 0; i < scene.agents.size(); ++i) {
    AgentState cur = scene.agents[i];
    std::vector<Vec2> traj;
    for (const auto& u : rollout.controls[i]) {
      cur = integrate_bicycle(cur, u, dt);
      traj.push_back(cur.position());
    }
    out.push_back(std::move(traj));
  }
  return out;
}

inline double loss_traj(const std::vector<std::vector<Vec2>>& pred, const RecoveryTarget& target,
                        const std::vector<std::vector<double>>& gates) {
  std::vector<std::vector<std::array<double, 2>>> p;
  for (const auto& a : pred) {
    std::vector<std::array<double, 2>> row;
    for (const auto& v : a) row.push_back({v.x, v.y});
    p.push_back(std::move(row));
  }
  const std::vector<double> dummy{0.0};
  return rnet::loss_traj_t<double>(dummy, p, target, gates);
}

inline double loss_smooth(const ControlRollout& rollout) {
  std::vector<std::vector<std::array<double, 2>>> c;
  for (const auto& a : rollout.controls) {
    std::vector<std::array<double, 2>> row;
    for (const auto& u : a) row.push_back({u.accel, u.steer});
    c.push_back(std::move(row));
  }
  const std::vector<double> dummy{0.0};
  return rnet::loss_smooth_t<double>(dummy, c);
}

inline double loss_coll(const std::vector<std::vector<Vec2>>& pred,
                        const std::vector<double>& radii, double margin = 0.5) {
  std::vector<std::vector<std::array<double, 2>>> p;
  for (const auto& a : pred) {
    std::vector<std::array<double, 2>> row;
    for (const auto& v : a) row.push_back({v.x, v.y});
    p.push_back(std::move(row));
  }
  const std::vector<double> dummy{0.0};
  return rnet::loss_coll_t<double>(dummy, p, radii, margin);
}

inline double loss_low(double l_traj, double l_smooth, double l_coll, double lambda_s,
                       double lambda_c) {
  if (lambda_s < 0.0 || lambda_c < 0.0) throw ValidationError("loss weights must be >= 0");
  return l_traj + lambda_s * l_smooth + lambda_c * l_coll;
}

// Full forward chain (encode -> decode -> rollout -> losses) on plain doubles.
struct LowLossBreakdown {
  double traj = 0.0, smooth = 0.0, coll = 0.0, total = 0.0;
};

template <class S, class P>
S low_loss_chain(const P& p, const RealizerDims& dims, const SceneState& scene,
                 const SceneHistory& history, const std::vector<Command>& commands,
                 const RecoveryTarget& target, const std::vector<std::vector<double>>& gates,
                 const ControlBounds& bounds, double dt, double lambda_s, double lambda_c,
                 bool passive, LowLossBreakdown* breakdown = nullptr) {
  auto z = rnet::encode_scene_t<S>(p, dims, history);
  auto c = rnet::encode_intent_t<S>(p, dims, scene, commands);
  auto raw = rnet::decode_raw_t<S>(p, dims, z, c, passive);
  auto controls = rnet::clamp_rollout(raw, dims.t_f, bounds);
  auto pos = rnet::rollout_positions_t<S>(p, scene, controls, dt);
  std::vector<double> radii;
  for (const auto& a : scene.agents) radii.push_back(body_disc_radius(a));
  const S lt = rnet::loss_traj_t<S>(p, pos, target, gates);
  const S ls = rnet::loss_smooth_t<S>(p, controls);
  const S lc = rnet::loss_coll_t<S>(p, pos, radii);
  if (breakdown) {
    breakdown->traj = value_of(lt);
    breakdown->smooth = value_of(ls);
    breakdown->coll = value_of(lc);
    breakdown->total = value_of(lt) + lambda_s * value_of(ls) + lambda_c * value_of(lc);
  }
  return lt + lambda_s * ls + lambda_c * lc;
}

inline double eval_loss_low(const RealizerParams& params, const RealizerDims& dims,
                            const SceneState& scene, const SceneHistory& history,
                            const std::vector<Command>& commands, const RecoveryTarget& target,
                            const std::vector<std::vector<double>>& gates,
                            const ControlBounds& bounds, double dt, double lambda_s,
                            double lambda_c, bool passive = false,
                            LowLossBreakdown* breakdown = nullptr) {
  return low_loss_chain<double>(params, dims, scene, history, commands, target, gates, bounds, dt,
                                lambda_s, lambda_c, passive, breakdown);
}

// Analytic reverse-mode gradient of loss_low w.r.t. every parameter.
inline std::vector<double> grad_low(const RealizerParams& params, const RealizerDims& dims,
                                    const SceneState& scene, const SceneHistory& history,
                                    const std::vector<Command>& commands,
                                    const RecoveryTarget& target,
                                    const std::vector<std::vector<double>>& gates,
                                    const ControlBounds& bounds, double dt, double lambda_s,
                                    double lambda_c, bool passive = false) {
  Tape tape;
  std::vector<Var> p;
  p.reserve(params.size());
  for (double v : params) p.emplace_back(tape, v);
  const Var loss = low_loss_chain<Var>(p, dims, scene, history, commands, target, gates, bounds,
                                       dt, lambda_s, lambda_c, passive);
  if (!std::isfinite(loss.v)) throw DivergenceError("non-finite loss in grad_low");
  const auto adj = tape.backward(loss.idx);
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    grad[i] = adj[static_cast<std::size_t>(p[i].idx)];
    if (!std::isfinite(grad[i])) throw DivergenceError("non-finite gradient in grad_low");
  }
  return grad;
}

inline RealizerParams sgd_step(const RealizerParams& params, const std::vector<double>& grad,
                               double step_size) {
  if (params.size() != grad.size()) throw ArityError("sgd_step: shape mismatch");
  RealizerParams next = params;
  for (std::size_t i = 0; i < next.size(); ++i) next[i] -= step_size * grad[i];
  return next;
}

}  // namespace hsim
