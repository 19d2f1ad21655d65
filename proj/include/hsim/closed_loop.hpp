#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "hsim/errors.hpp"
#include "hsim/expert.hpp"
#include "hsim/metrics.hpp"
#include "hsim/policy_high.hpp"
#include "hsim/realizer.hpp"
#include "hsim/scenario.hpp"
#include "hsim/scene.hpp"
#include "hsim/step_record.hpp"

namespace hsim {

struct EpisodeConfig {
  double dt = 0.1;
  int t_f = 8;
  int t_h = 10;
  int max_steps = 600;
  std::uint64_t seed = 0;
  double gamma = 0.99;
  int hold_k = 1;             // re-sample commands every k steps
  bool freeze_ordering = false;
};

struct RewardWeights {
  double progress = 1.0;
  double collision = 10.0;
  double accel = 0.1;
  double ttc = 1.0;
};

struct SimModel {
  HighPolicyParams high;
  RealizerParams low;
  RealizerDims dims;
  ControlBounds bounds;
  ExpertConfig expert;
  RewardWeights rewards;
  bool passive = false;
};

// Observer for every control handed to the dynamics integrator; reports the
// rollout index it came from so tests can assert receding-horizon discipline.
using IntegrationProbe = std::function<void(int agent_id, int rollout_index, const Control& u)>;

struct StepOutput {
  SceneState next;
  StepRecord record;
  CommandSample commands;
  ControlRollout rollout;
  Ordering ordering;
  std::vector<double> agent_rewards;  // indexed by agent slot
};

namespace detail {

inline double route_arc(const RoadNetwork& net, const AgentState& a) {
  return net.route_path(a.route_id).project(a.position()).arc;
}

// Drift gate: full supervision weight when the agent has drifted off its
// route or is near a signalized stop line (the states where tracking the
// recovery expert matters most), reduced weight when it is merely cruising.
inline std::vector<std::vector<double>> drift_gates(const SceneState& scene, int t_f) {
  std::vector<std::vector<double>> gates;
  for (const auto& a : scene.agents) {
    double w = 0.2;
    if (scene.network) {
      const Polyline& path = scene.network->route_path(a.route_id);
      const auto proj = path.project(a.position());
      const double herr = std::abs(wrap_angle(a.heading - path.heading_at(proj.arc)));
      if (std::abs(proj.lateral) > 0.75 || herr > 0.3) w = 1.0;
      const auto stop = scene.network->next_stop_line(a.route_id, proj.arc);
      if (stop && stop->distance < 40.0) w = 1.0;
    }
    gates.emplace_back(static_cast<std::size_t>(t_f), w);
  }
  return gates;
}

inline std::vector<double> command_speed_caps(const SceneState& scene,
                                              const std::vector<Command>& commands) {
  std::vector<double> caps(scene.agents.size(), std::numeric_limits<double>::infinity());
  if (!scene.network) return caps;
  for (std::size_t i = 0; i < scene.agents.size(); ++i) {
    const AgentState& a = scene.agents[i];
    const double arc = route_arc(*scene.network, a);
    const double limit = scene.network->route_speed_limit(a.route_id, arc);
    caps[i] = maneuver_speed_cap(commands[i].maneuver, limit);
  }
  return caps;
}

}  // namespace detail

// One closed-loop step: sample commands, decode a T_f-step rollout, execute
// only its first step, and advance the scene by dt.
inline StepOutput step_closed_loop(const SceneHistory& history, const std::vector<int>& agent_ids,
                                   const SimModel& model, const EpisodeConfig& cfg,
                                   std::mt19937_64& rng,
                                   const CommandSample* held_commands = nullptr,
                                   const Ordering* frozen_ordering = nullptr,
                                   const IntegrationProbe* probe = nullptr) {
  StepOutput out;
  const SceneState& scene = history.latest();
  out.ordering = frozen_ordering ? *frozen_ordering : make_ordering(scene);
  out.commands = held_commands
                     ? *held_commands
                     : sample_commands(scene, history, model.high, out.ordering, rng,
                                       model.dims.waypoints);

  const SceneLatent z = encode_scene(history, model.low, model.dims);
  const auto intents = encode_intent(scene, out.commands.commands, model.low, model.dims);
  out.rollout = decode_controls(z, intents, model.low, model.dims, model.bounds, model.passive);

  out.next = scene;
  out.next.time = scene.time + cfg.dt;
  std::vector<double> arc_before(scene.agents.size(), 0.0);
  if (scene.network)
    for (std::size_t i = 0; i < scene.agents.size(); ++i)
      arc_before[i] = detail::route_arc(*scene.network, scene.agents[i]);

  for (std::size_t i = 0; i < scene.agents.size(); ++i) {
    const Control u = out.rollout.controls[i][0];  // first step only, bitwise
    if (probe) (*probe)(agent_ids[i], 0, u);
    out.next.agents[i] = integrate_bicycle(scene.agents[i], u, cfg.dt);
  }
  out.next.refresh_signals();

  const auto collisions = detect_collisions(out.next);
  std::vector<bool> in_collision(out.next.agents.size(), false);
  for (const auto& [a, b] : collisions) {
    in_collision[static_cast<std::size_t>(a)] = true;
    in_collision[static_cast<std::size_t>(b)] = true;
  }

  out.agent_rewards.assign(scene.agents.size(), 0.0);
  out.record.time = out.next.time;
  for (std::size_t i = 0; i < scene.agents.size(); ++i) {
    double r = 0.0;
    if (scene.network) {
      const double progress = detail::route_arc(*scene.network, out.next.agents[i]) -
                              arc_before[i];
      r += model.rewards.progress * progress;
    }
    if (in_collision[i]) r -= model.rewards.collision;
    const Control u = out.rollout.controls[i][0];
    r -= model.rewards.accel * std::abs(u.accel);
    double min_ttc = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < out.next.agents.size(); ++j)
      if (j != i) min_ttc = std::min(min_ttc, compute_ttc(out.next, i, j));
    if (min_ttc < kTtcThreshold) r -= model.rewards.ttc;
    out.agent_rewards[i] = r;

    AgentRecord ar;
    ar.agent_id = agent_ids[i];
    ar.state = out.next.agents[i];
    ar.control = u;
    ar.maneuver = out.commands.commands[i].maneuver;
    ar.reward = r;
    out.record.agents.push_back(ar);
  }
  return out;
}

struct LowSample {
  SceneState scene;
  SceneHistory history;
  std::vector<Command> commands;
  RecoveryTarget target;
  std::vector<std::vector<double>> gates;

  LowSample(SceneState s, SceneHistory h, std::vector<Command> c, RecoveryTarget t,
            std::vector<std::vector<double>> g)
      : scene(std::move(s)), history(std::move(h)), commands(std::move(c)),
        target(std::move(t)), gates(std::move(g)) {}
};

struct EpisodeResult {
  std::vector<StepRecord> records;
  std::vector<double> rewards;  // per-step team reward
  MetricsReport report;
  double episode_ret = 0.0;
  // Training byproducts (filled when collect = true).
  HighTrajectory high_trajectory;
  std::vector<LowSample> low_samples;
};

// ADE against the expert rollout recomputed along the executed scene: at
// each logged step, the expert's T_f-step recovery rollout is the reference
// for the executed positions over the same window.
inline double compute_closed_loop_ade(const std::vector<StepRecord>& records,
                                      const RoadNetwork& network, const ExpertConfig& expert,
                                      double dt, int t_f) {
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s + static_cast<std::size_t>(t_f) < records.size(); ++s) {
    SceneState scene;
    scene.time = records[s].time;
    scene.network = &network;
    scene.refresh_signals();
    for (const auto& ar : records[s].agents) scene.agents.push_back(ar.state);
    if (scene.agents.empty()) continue;
    RecoveryTarget ref;
    try {
      ref = expert_rollout(scene, static_cast<std::size_t>(t_f), dt, expert);
    } catch (const OffMapError&) {
      continue;
    }
    for (std::size_t i = 0; i < records[s].agents.size(); ++i) {
      const int id = records[s].agents[i].agent_id;
      bool complete = true;
      for (int t = 1; t <= t_f && complete; ++t) {
        const auto& rec = records[s + static_cast<std::size_t>(t)];
        bool found = false;
        for (const auto& ar : rec.agents) {
          if (ar.agent_id == id) {
            acc += distance(ar.state.position(),
                            ref.positions[i][static_cast<std::size_t>(t - 1)]);
            ++count;
            found = true;
            break;
          }
        }
        complete = found;
      }
    }
  }
  return count > 0 ? acc / static_cast<double>(count) : 0.0;
}

// Full episode driver: spawns agents per the scenario schedule, steps the
// hierarchy in closed loop, despawns arrivals, and accumulates metrics.
inline EpisodeResult run_episode(const EpisodeConfig& cfg, const SimModel& model,
                                 const Scenario& scenario, bool collect = false,
                                 int sample_stride = 5,
                                 const IntegrationProbe* probe = nullptr) {
  scenario.validate();
  EpisodeResult res;
  std::mt19937_64 rng(cfg.seed);
  MetricsAccumulator acc(cfg.dt);

  SceneState scene;
  scene.network = &scenario.network;
  scene.refresh_signals();
  std::vector<int> ids;
  int next_id = 0;
  std::size_t spawn_cursor = 0;
  auto spawns = scenario.spawns;
  std::stable_sort(spawns.begin(), spawns.end(),
                   [](const SpawnEvent& a, const SpawnEvent& b) { return a.time < b.time; });

  SceneHistory history(static_cast<std::size_t>(cfg.t_h), cfg.dt);
  std::optional<CommandSample> held;
  std::optional<Ordering> frozen;
  int held_age = 0;

  for (int step = 0; step < cfg.max_steps; ++step) {
    bool composition_changed = false;
    // Spawns due at the current time.
    while (spawn_cursor < spawns.size() && spawns[spawn_cursor].time <= scene.time + 1e-9) {
      const auto& sp = spawns[spawn_cursor++];
      const Polyline& path = scenario.network.route_path(sp.route);
      AgentState a;
      a.x = path.point_at(0.0).x;
      a.y = path.point_at(0.0).y;
      a.heading = path.heading_at(0.0);
      a.speed = sp.speed;
      a.wheelbase = scenario.defaults.wheelbase;
      a.half_length = scenario.defaults.half_length;
      a.half_width = scenario.defaults.half_width;
      a.route_id = sp.route;
      scene.agents.push_back(a);
      ids.push_back(next_id++);
      composition_changed = true;
    }
    // Despawn arrivals.
    for (std::size_t i = scene.agents.size(); i-- > 0;) {
      const Polyline& path = scenario.network.route_path(scene.agents[i].route_id);
      if (path.project(scene.agents[i].position()).arc >= path.length() - 1.0) {
        scene.agents.erase(scene.agents.begin() + static_cast<std::ptrdiff_t>(i));
        ids.erase(ids.begin() + static_cast<std::ptrdiff_t>(i));
        composition_changed = true;
      }
    }
    if (spawn_cursor >= spawns.size() && scene.agents.empty()) break;  // all arrived

    if (composition_changed) {
      history = SceneHistory(static_cast<std::size_t>(cfg.t_h), cfg.dt);
      held.reset();
      frozen.reset();
    }
    if (history.empty()) history.push(scene);

    if (scene.agents.empty()) {
      scene.time += cfg.dt;
      scene.refresh_signals();
      history = SceneHistory(static_cast<std::size_t>(cfg.t_h), cfg.dt);
      continue;
    }

    if (cfg.freeze_ordering && !frozen) frozen = make_ordering(scene);
    const bool resample = !held || held_age >= cfg.hold_k;
    StepOutput so = step_closed_loop(history, ids, model, cfg, rng,
                                     resample ? nullptr : &*held,
                                     frozen ? &*frozen : nullptr, probe);
    if (resample) {
      held = so.commands;
      held_age = 1;
    } else {
      ++held_age;
    }

    if (collect) {
      if (resample) {
        // High-level trajectory: one (state, maneuver) per rank per step.
        std::vector<Command> preceding;
        for (std::size_t rank = 0; rank < so.ordering.perm.size(); ++rank) {
          const std::size_t agent = so.ordering.perm[rank];
          res.high_trajectory.states.push_back(
              build_subgame_state(scene, history, so.ordering, preceding, rank));
          res.high_trajectory.maneuvers.push_back(
              static_cast<int>(so.commands.commands[agent].maneuver));
          preceding.push_back(so.commands.commands[agent]);
        }
      }
      if (step % sample_stride == 0) {
        const auto caps = detail::command_speed_caps(scene, so.commands.commands);
        try {
          RecoveryTarget target =
              expert_rollout(scene, static_cast<std::size_t>(cfg.t_f), cfg.dt, model.expert, caps);
          res.low_samples.emplace_back(scene, history, so.commands.commands, std::move(target),
                                       detail::drift_gates(scene, cfg.t_f));
        } catch (const OffMapError&) {
          // drifted beyond recovery; skip the sample
        }
      }
    }

    double team = 0.0;
    for (double r : so.agent_rewards) team += r;
    res.rewards.push_back(team);
    acc.add(so.record);
    res.records.push_back(std::move(so.record));
    scene = std::move(so.next);
    history.push(scene);
  }

  res.episode_ret = episode_return(res.rewards, cfg.gamma);
  res.high_trajectory.ret = res.episode_ret;
  const double ade =
      compute_closed_loop_ade(res.records, scenario.network, model.expert, cfg.dt, cfg.t_f);
  res.report = acc.report(ade);
  return res;
}

inline constexpr double kGradClipNorm = 1.0;

struct CotrainConfig {
  int epochs = 30;
  double lr_high = 0.002;
  double lr_low = 0.001;   // Adam step size for the distillation waves
  int waves = 300;           // Adam waves per epoch
  int batch = 32;            // low samples per wave
  int sample_stride = 1;
  int episodes_per_epoch = 4;  // rollouts per scenario, REINFORCE batch size
  double lambda_s = 0.1;
  double lambda_c = 1.0;
};

struct CotrainResult {
  SimModel model;
  std::vector<double> return_curve;    // mean episode return per epoch
  std::vector<double> holdout_curve;   // held-out loss_low per epoch (index 0 = before training)
};

struct CotrainDivergence : DivergenceError {
  SimModel last_good;
  CotrainDivergence(const std::string& what, SimModel m)
      : DivergenceError(what), last_good(std::move(m)) {}
};

inline double mean_holdout_loss(const SimModel& model, const std::vector<LowSample>& holdout,
                                const CotrainConfig& cc, double dt) {
  double acc = 0.0;
  for (const auto& s : holdout)
    acc += eval_loss_low(model.low, model.dims, s.scene, s.history, s.commands, s.target, s.gates,
                         model.bounds, dt, cc.lambda_s, cc.lambda_c, model.passive);
  return holdout.empty() ? 0.0 : acc / static_cast<double>(holdout.size());
}

// Alternating co-training: REINFORCE on the command policy, then SGD waves
// distilling the realizer toward command-consistent expert recovery targets.
inline CotrainResult cotrain(const EpisodeConfig& cfg, const SimModel& initial,
                             const std::vector<const Scenario*>& scenarios,
                             const CotrainConfig& cc,
                             std::vector<LowSample>* holdout_out = nullptr) {
  if (scenarios.empty()) throw ValidationError("cotrain: empty scenario set");
  CotrainResult res;
  res.model = initial;

  // Held-out fixture collected once with the initial model.
  std::vector<LowSample> holdout;
  {
    EpisodeConfig hc = cfg;
    hc.seed = cfg.seed + 977;
    auto ep = run_episode(hc, res.model, *scenarios[0], true, cc.sample_stride);
    holdout = std::move(ep.low_samples);
  }
  res.holdout_curve.push_back(mean_holdout_loss(res.model, holdout, cc, cfg.dt));
  std::vector<SimModel> snapshots{res.model};  // snapshots[i] pairs with holdout_curve[i]
  // Closed-loop safety score for each snapshot, measured on the episodes that
  // snapshot itself drove. Held-out loss alone ranks one-step imitation on a
  // stale state distribution; it can prefer a model that cannot drive.
  std::vector<double> safety_scores;

  SimModel last_good = res.model;
  // Adam state for the realizer, persisted across epochs so the adaptive
  // step sizes survive the shifting command distribution.
  std::vector<double> adam_m(res.model.low.size(), 0.0);
  std::vector<double> adam_v(res.model.low.size(), 0.0);
  long adam_t = 0;
  try {
    for (int epoch = 0; epoch < cc.epochs; ++epoch) {
      std::vector<HighTrajectory> trajectories;
      std::vector<LowSample> samples;
      double ret_sum = 0.0;
      double score_sum = 0.0;
      const int reps = std::max(1, cc.episodes_per_epoch);
      for (std::size_t k = 0; k < scenarios.size(); ++k) {
        for (int rep = 0; rep < reps; ++rep) {
          EpisodeConfig ec = cfg;
          ec.seed = cfg.seed + 10007ull * static_cast<std::uint64_t>(epoch) + 131ull * k +
                    static_cast<std::uint64_t>(rep);
          auto ep = run_episode(ec, res.model, *scenarios[k], true, cc.sample_stride);
          ret_sum += ep.episode_ret;
          score_sum += ep.report.collision_per_km + ep.report.safety_flag_per_km;
          trajectories.push_back(std::move(ep.high_trajectory));
          for (auto& s : ep.low_samples) samples.push_back(std::move(s));
        }
      }
      const double n_eps = static_cast<double>(scenarios.size() * std::size_t(reps));
      res.return_curve.push_back(ret_sum / n_eps);
      safety_scores.push_back(score_sum / n_eps);

      if (trajectories.size() > 1)
        res.model.high = reinforce_update(res.model.high, trajectories, cc.lr_high);

      if (!samples.empty()) {
        std::mt19937_64 rng(cfg.seed + 31ull + static_cast<std::uint64_t>(epoch));
        for (int wave = 0; wave < cc.waves; ++wave) {
          std::vector<double> grad(res.model.low.size(), 0.0);
          const int bsz = std::min<int>(cc.batch, static_cast<int>(samples.size()));
          for (int b = 0; b < bsz; ++b) {
            std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
            const LowSample& s = samples[pick(rng)];
            const auto g = grad_low(res.model.low, res.model.dims, s.scene, s.history, s.commands,
                                    s.target, s.gates, res.model.bounds, cfg.dt, cc.lambda_s,
                                    cc.lambda_c, res.model.passive);
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i] / bsz;
          }
          // Collision hinge terms occasionally spike the batch gradient;
          // clip its norm so one wave cannot kick the realizer off the
          // distilled solution.
          double norm_sq = 0.0;
          for (double g : grad) norm_sq += g * g;
          const double norm = std::sqrt(norm_sq);
          if (norm > kGradClipNorm)
            for (double& g : grad) g *= kGradClipNorm / norm;
          // Adam update: the conditioning pathways (signal flag, command
          // embedding) carry much smaller raw gradients than the output
          // bias, and plain SGD stalls on a mean-predictor plateau.
          ++adam_t;
          const double b1 = 0.9, b2 = 0.999;
          const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam_t));
          const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam_t));
          std::vector<double> step(grad.size());
          for (std::size_t i = 0; i < grad.size(); ++i) {
            adam_m[i] = b1 * adam_m[i] + (1.0 - b1) * grad[i];
            adam_v[i] = b2 * adam_v[i] + (1.0 - b2) * grad[i] * grad[i];
            step[i] = (adam_m[i] / bc1) / (std::sqrt(adam_v[i] / bc2) + 1e-8);
          }
          res.model.low = sgd_step(res.model.low, step, cc.lr_low);
        }
      }
      res.holdout_curve.push_back(mean_holdout_loss(res.model, holdout, cc, cfg.dt));
      snapshots.push_back(res.model);
      last_good = res.model;
    }
  } catch (const DivergenceError& e) {
    throw CotrainDivergence(e.what(), last_good);
  }
  // Score the final snapshot the same way the per-epoch ones were scored.
  if (cc.epochs > 0) {
    double score_sum = 0.0;
    const int reps = std::max(1, cc.episodes_per_epoch);
    for (std::size_t k = 0; k < scenarios.size(); ++k) {
      for (int rep = 0; rep < reps; ++rep) {
        EpisodeConfig ec = cfg;
        ec.seed = cfg.seed + 10007ull * static_cast<std::uint64_t>(cc.epochs) + 131ull * k +
                  static_cast<std::uint64_t>(rep);
        auto ep = run_episode(ec, res.model, *scenarios[k]);
        score_sum += ep.report.collision_per_km + ep.report.safety_flag_per_km;
      }
    }
    safety_scores.push_back(score_sum /
                            static_cast<double>(scenarios.size() * std::size_t(reps)));
  }
  // Keep the snapshot that drove most safely; on-policy distillation can
  // regress after its best epoch once the command distribution drifts, and a
  // saturated realizer cannot recover. Ties go to the lower held-out loss.
  if (!safety_scores.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < safety_scores.size(); ++i) {
      if (safety_scores[i] < safety_scores[best] ||
          (safety_scores[i] == safety_scores[best] &&
           res.holdout_curve[i] < res.holdout_curve[best]))
        best = i;
    }
    res.model = snapshots[best];
  }
  if (holdout_out) *holdout_out = std::move(holdout);
  return res;
}

}  // namespace hsim
