#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hsim/closed_loop.hpp"
#include "hsim/io.hpp"

namespace fs = std::filesystem;
using namespace hsim;

namespace {

struct CommonOpts {
  std::string scenario_path;
  std::string config_path;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> hold_k;
  bool passive = false;
};

RunConfig load_config(const CommonOpts& o) {
  RunConfig cfg = o.config_path.empty() ? parse_run_config("{}")
                                        : parse_run_config(read_file(o.config_path));
  if (o.seed) cfg.episode.seed = *o.seed;
  if (o.hold_k) cfg.episode.hold_k = *o.hold_k;
  return cfg;
}

SimModel build_model(const RunConfig& cfg, bool passive, const std::string& high_ckpt,
                     const std::string& low_ckpt) {
  SimModel m;
  m.dims = cfg.dims;
  m.bounds = cfg.bounds;
  m.expert = cfg.expert;
  m.rewards = cfg.rewards;
  m.passive = passive;
  m.high = high_ckpt.empty() ? init_high_params(cfg.episode.seed + 1)
                             : read_checkpoint(high_ckpt, kMagicHigh);
  m.low = low_ckpt.empty() ? init_realizer_params(cfg.dims, cfg.episode.seed + 2)
                           : read_checkpoint(low_ckpt, kMagicRealizer);
  const RealizerLayout L(cfg.dims);
  if (m.low.size() != static_cast<std::size_t>(L.total))
    throw ValidationError("realizer checkpoint size does not match the configured dims");
  const HighParamLayout HL;
  if (m.high.size() != static_cast<std::size_t>(HL.total))
    throw ValidationError("command-policy checkpoint has the wrong parameter count");
  return m;
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_curve(const std::string& path, const std::vector<double>& curve) {
  std::string text = "index,value\n";
  for (std::size_t i = 0; i < curve.size(); ++i)
    text += std::to_string(i) + "," + format_g17(curve[i]) + "\n";
  write_file(path, text);
}

int cmd_simulate(const CommonOpts& o, const std::string& high_ckpt,
                 const std::string& low_ckpt) {
  const RunConfig cfg = load_config(o);
  const Scenario sc = parse_scenario(read_file(o.scenario_path));
  const SimModel model = build_model(cfg, o.passive, high_ckpt, low_ckpt);
  const EpisodeResult res = run_episode(cfg.episode, model, sc);
  fs::create_directories(o.out);
  write_file(join(o.out, "log.csv"), write_log(res.records));
  write_file(join(o.out, "metrics.txt"), serialize_report(res.report));
  std::cout << serialize_report(res.report);
  std::cout << "steps " << res.records.size() << "\nreturn " << format_g17(res.episode_ret)
            << "\n";
  return 0;
}

int cmd_cotrain(const CommonOpts& o, const std::vector<std::string>& scenario_paths) {
  const RunConfig cfg = load_config(o);
  std::vector<Scenario> scenarios;
  for (const auto& p : scenario_paths) scenarios.push_back(parse_scenario(read_file(p)));
  std::vector<const Scenario*> ptrs;
  for (const auto& s : scenarios) ptrs.push_back(&s);
  SimModel initial = build_model(cfg, o.passive, "", "");
  fs::create_directories(o.out);
  try {
    const CotrainResult out = cotrain(cfg.episode, initial, ptrs, cfg.train);
    write_checkpoint(join(o.out, "high.ckpt"), kMagicHigh, out.model.high);
    write_checkpoint(join(o.out, "realizer.ckpt"), kMagicRealizer, out.model.low);
    write_curve(join(o.out, "return_curve.csv"), out.return_curve);
    write_curve(join(o.out, "holdout_curve.csv"), out.holdout_curve);
    if (!out.holdout_curve.empty())
      std::cout << "holdout_loss " << format_g17(out.holdout_curve.front()) << " -> "
                << format_g17(out.holdout_curve.back()) << "\n";
    return 0;
  } catch (const CotrainDivergence& e) {
    // Preserve the last stable parameters before reporting divergence.
    write_checkpoint(join(o.out, "high.ckpt"), kMagicHigh, e.last_good.high);
    write_checkpoint(join(o.out, "realizer.ckpt"), kMagicRealizer, e.last_good.low);
    std::cerr << "divergence: " << e.what() << " (last good checkpoint saved)\n";
    return 3;
  }
}

int cmd_eval(const CommonOpts& o, const std::string& log_path) {
  const RunConfig cfg = load_config(o);
  const Scenario sc = parse_scenario(read_file(o.scenario_path));
  const auto records = parse_log(read_file(log_path), &sc);
  const double ade = compute_closed_loop_ade(records, sc.network, cfg.expert, cfg.episode.dt,
                                             cfg.episode.t_f);
  const MetricsReport report = accumulate(records, cfg.episode.dt, ade);
  const std::string text = serialize_report(report);
  if (o.out != "." && !o.out.empty()) write_file(o.out, text);
  std::cout << text;
  return 0;
}

int cmd_render(const CommonOpts& o, const std::string& log_path, int stride) {
  const Scenario sc = parse_scenario(read_file(o.scenario_path));
  const auto records = parse_log(read_file(log_path), &sc);
  RenderOptions opt;
  opt.stride = stride;
  const auto frames = render_frames(records, sc, opt);
  fs::create_directories(o.out);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.svg", i);
    write_file(join(o.out, name), frames[i]);
  }
  std::cout << "frames " << frames.size() << "\n";
  return 0;
}

// Finite-difference audit of the realizer gradient on a compact fixture.
int cmd_gradcheck(const CommonOpts& o, int seeds) {
  const RunConfig cfg = load_config(o);
  const RealizerDims dims{4, 4, 3, 3, 2};
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < static_cast<std::uint64_t>(seeds); ++seed) {
    std::mt19937_64 rng(cfg.episode.seed + seed);
    std::uniform_real_distribution<double> jit(-0.5, 0.5);
    SceneState scene;
    scene.time = 0.2;
    AgentState a;
    a.x = jit(rng);
    a.heading = 0.05;
    a.speed = 5.0;
    AgentState b;
    b.x = 10.0;
    b.y = 3.0 + jit(rng);
    b.heading = 0.3;
    b.speed = 4.0;
    scene.agents = {a, b};
    SceneHistory hist(3, 0.1);
    for (int t = 0; t < 3; ++t) {
      SceneState s = scene;
      s.time = 0.1 * t;
      for (auto& ag : s.agents) {
        ag.x -= ag.speed * std::cos(ag.heading) * 0.1 * (2 - t);
        ag.y -= ag.speed * std::sin(ag.heading) * 0.1 * (2 - t);
      }
      hist.push(s);
    }
    std::vector<Command> cmds;
    RecoveryTarget target;
    std::vector<std::vector<double>> gates;
    for (const auto& ag : scene.agents) {
      Command c;
      c.maneuver = Maneuver::Maintain;
      for (int k = 1; k <= 2; ++k)
        c.waypoints.push_back({ag.x + 5.0 * k * std::cos(ag.heading),
                               ag.y + 5.0 * k * std::sin(ag.heading)});
      cmds.push_back(c);
      std::vector<Vec2> tgt;
      for (int t = 1; t <= 3; ++t)
        tgt.push_back({ag.x + ag.speed * 0.1 * t * std::cos(ag.heading),
                       ag.y + ag.speed * 0.1 * t * std::sin(ag.heading)});
      target.positions.push_back(tgt);
      gates.push_back({1.0, 1.0, 1.0});
    }
    const RealizerParams p = init_realizer_params(dims, 100 + seed);
    const auto grad = grad_low(p, dims, scene, hist, cmds, target, gates, cfg.bounds, 0.1,
                               cfg.train.lambda_s, cfg.train.lambda_c);
    auto eval = [&](const RealizerParams& q) {
      return eval_loss_low(q, dims, scene, hist, cmds, target, gates, cfg.bounds, 0.1,
                           cfg.train.lambda_s, cfg.train.lambda_c);
    };
    const double h = 1e-5;
    double seed_worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (std::abs(grad[i]) <= 1e-8) continue;
      RealizerParams plus = p, minus = p;
      plus[i] += h;
      minus[i] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2 * h);
      seed_worst = std::max(seed_worst,
                            std::abs(fd - grad[i]) / std::max(std::abs(grad[i]), 1e-8));
    }
    std::cout << "seed " << seed << " max_rel_err " << format_g17(seed_worst) << "\n";
    worst = std::max(worst, seed_worst);
  }
  const bool ok = worst < 1e-4;
  std::cout << "worst " << format_g17(worst) << " " << (ok ? "OK" : "FAIL") << "\n";
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical closed-loop traffic simulator"};
  app.require_subcommand(1);
  CommonOpts o;
  std::vector<std::string> cotrain_scenarios;
  std::string log_path, high_ckpt, low_ckpt;
  int stride = 10, gradcheck_seeds = 5;

  auto add_common = [&](CLI::App* sub, bool needs_scenario) {
    if (needs_scenario)
      sub->add_option("--scenario", o.scenario_path, "scenario json")->required();
    sub->add_option("--config", o.config_path, "run configuration json");
    sub->add_option("--out", o.out, "output directory or file");
    sub->add_option("--seed", o.seed, "override the config seed");
    sub->add_option("--hold-k", o.hold_k, "re-sample commands every k steps");
    sub->add_flag("--passive", o.passive, "ablate the intention pathway");
  };

  CLI::App* sim = app.add_subcommand("simulate", "run one closed-loop episode");
  add_common(sim, true);
  sim->add_option("--high-checkpoint", high_ckpt, "command-policy checkpoint");
  sim->add_option("--low-checkpoint", low_ckpt, "realizer checkpoint");

  CLI::App* tr = app.add_subcommand("cotrain", "co-train the policy hierarchy");
  tr->add_option("--scenario", cotrain_scenarios, "scenario json (repeatable)")->required();
  tr->add_option("--config", o.config_path, "run configuration json");
  tr->add_option("--out", o.out, "output directory");
  tr->add_option("--seed", o.seed, "override the config seed");
  tr->add_option("--hold-k", o.hold_k, "re-sample commands every k steps");
  tr->add_flag("--passive", o.passive, "ablate the intention pathway");

  CLI::App* ev = app.add_subcommand("eval", "compute metrics from a log");
  add_common(ev, true);
  ev->add_option("--log", log_path, "trajectory log csv")->required();

  CLI::App* rn = app.add_subcommand("render", "render a log to svg frames");
  add_common(rn, true);
  rn->add_option("--log", log_path, "trajectory log csv")->required();
  rn->add_option("--stride", stride, "steps per frame");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  add_common(gc, false);
  gc->add_option("--seeds", gradcheck_seeds, "number of fixture seeds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(o, high_ckpt, low_ckpt);
    if (tr->parsed()) return cmd_cotrain(o, cotrain_scenarios);
    if (ev->parsed()) return cmd_eval(o, log_path);
    if (rn->parsed()) return cmd_render(o, log_path, stride);
    if (gc->parsed()) return cmd_gradcheck(o, gradcheck_seeds);
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
