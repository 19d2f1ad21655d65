#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsim/closed_loop.hpp"
#include "hsim/errors.hpp"
#include "hsim/metrics.hpp"
#include "hsim/scenario.hpp"
#include "hsim/step_record.hpp"

namespace hsim {

using nlohmann::json;

inline constexpr int kScenarioVersion = 1;

namespace detail {

inline void check_fields(const json& obj, const std::vector<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const auto& a : allowed)
      if (key == a) ok = true;
    if (!ok) throw ValidationError("unknown field '" + key + "' in " + where);
  }
}

inline Vec2 parse_point(const json& j) {
  if (!j.is_array() || j.size() != 2) throw ValidationError("point must be [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace detail

inline Scenario parse_scenario(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scenario parse error: ") + e.what());
  }
  detail::check_fields(j, {"version", "defaults", "lanes", "junctions", "routes", "spawns"},
                       "scenario");
  if (!j.contains("version") || !j["version"].is_number_integer())
    throw ValidationError("scenario is missing an integer 'version'");
  if (j["version"].get<int>() != kScenarioVersion)
    throw ValidationError("unsupported scenario version " + j["version"].dump());

  Scenario sc;
  sc.version = kScenarioVersion;
  if (j.contains("defaults")) {
    const auto& d = j["defaults"];
    detail::check_fields(d, {"wheelbase", "half_length", "half_width"}, "defaults");
    sc.defaults.wheelbase = d.value("wheelbase", sc.defaults.wheelbase);
    sc.defaults.half_length = d.value("half_length", sc.defaults.half_length);
    sc.defaults.half_width = d.value("half_width", sc.defaults.half_width);
  }
  for (const auto& lj : j.value("lanes", json::array())) {
    detail::check_fields(lj, {"id", "points", "width", "speed_limit", "left", "right"}, "lane");
    Lane l;
    l.id = lj.at("id").get<std::string>();
    std::vector<Vec2> pts;
    for (const auto& pj : lj.at("points")) pts.push_back(detail::parse_point(pj));
    if (pts.size() < 2) throw ValidationError("lane " + l.id + " needs >= 2 points");
    l.centerline = Polyline(std::move(pts));
    l.width = lj.value("width", 3.5);
    l.speed_limit = lj.value("speed_limit", 13.9);
    l.left = lj.value("left", std::string());
    l.right = lj.value("right", std::string());
    sc.network.lanes.push_back(std::move(l));
  }
  for (const auto& jj : j.value("junctions", json::array())) {
    detail::check_fields(jj, {"id", "conflict_points", "stop_lanes", "cycle"}, "junction");
    Junction jn;
    jn.id = jj.at("id").get<std::string>();
    for (const auto& pj : jj.value("conflict_points", json::array()))
      jn.conflict_points.push_back(detail::parse_point(pj));
    for (const auto& sj : jj.value("stop_lanes", json::array()))
      jn.stop_lanes.push_back(sj.get<std::string>());
    for (const auto& pj : jj.value("cycle", json::array())) {
      detail::check_fields(pj, {"green", "duration"}, "signal phase");
      SignalPhase ph;
      for (const auto& g : pj.value("green", json::array()))
        ph.green_lanes.push_back(g.get<std::string>());
      ph.duration = pj.value("duration", 10.0);
      jn.cycle.push_back(std::move(ph));
    }
    sc.network.junctions.push_back(std::move(jn));
  }
  for (const auto& rj : j.value("routes", json::array())) {
    detail::check_fields(rj, {"id", "lanes"}, "route");
    Route r;
    r.id = rj.at("id").get<std::string>();
    for (const auto& lj : rj.at("lanes")) r.lanes.push_back(lj.get<std::string>());
    sc.network.routes.push_back(std::move(r));
  }
  for (const auto& sj : j.value("spawns", json::array())) {
    detail::check_fields(sj, {"time", "route", "speed"}, "spawn");
    SpawnEvent sp;
    sp.time = sj.value("time", 0.0);
    sp.route = sj.at("route").get<std::string>();
    sp.speed = sj.value("speed", 0.0);
    sc.spawns.push_back(std::move(sp));
  }
  sc.validate();
  return sc;
}

// Canonical form: sorted keys, 2-space indent, shortest float round-trip.
inline std::string serialize_scenario(const Scenario& sc) {
  json j;
  j["version"] = sc.version;
  j["defaults"] = {{"wheelbase", sc.defaults.wheelbase},
                   {"half_length", sc.defaults.half_length},
                   {"half_width", sc.defaults.half_width}};
  j["lanes"] = json::array();
  for (const auto& l : sc.network.lanes) {
    json lj;
    lj["id"] = l.id;
    lj["points"] = json::array();
    for (const auto& p : l.centerline.points()) lj["points"].push_back({p.x, p.y});
    lj["width"] = l.width;
    lj["speed_limit"] = l.speed_limit;
    lj["left"] = l.left;
    lj["right"] = l.right;
    j["lanes"].push_back(std::move(lj));
  }
  j["junctions"] = json::array();
  for (const auto& jn : sc.network.junctions) {
    json jj;
    jj["id"] = jn.id;
    jj["conflict_points"] = json::array();
    for (const auto& p : jn.conflict_points) jj["conflict_points"].push_back({p.x, p.y});
    jj["stop_lanes"] = jn.stop_lanes;
    jj["cycle"] = json::array();
    for (const auto& ph : jn.cycle)
      jj["cycle"].push_back({{"green", ph.green_lanes}, {"duration", ph.duration}});
    j["junctions"].push_back(std::move(jj));
  }
  j["routes"] = json::array();
  for (const auto& r : sc.network.routes)
    j["routes"].push_back({{"id", r.id}, {"lanes", r.lanes}});
  j["spawns"] = json::array();
  for (const auto& sp : sc.spawns)
    j["spawns"].push_back({{"time", sp.time}, {"route", sp.route}, {"speed", sp.speed}});
  return j.dump(2) + "\n";
}

struct RunConfig {
  EpisodeConfig episode;
  RealizerDims dims;
  ControlBounds bounds;
  ExpertConfig expert;
  RewardWeights rewards;
  CotrainConfig train;
};

inline RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config parse error: ") + e.what());
  }
  detail::check_fields(j, {"episode", "dims", "bounds", "expert", "rewards", "train"}, "config");
  RunConfig c;
  if (j.contains("episode")) {
    const auto& e = j["episode"];
    detail::check_fields(
        e, {"dt", "t_f", "t_h", "max_steps", "seed", "gamma", "hold_k", "freeze_ordering"},
        "episode");
    c.episode.dt = e.value("dt", c.episode.dt);
    c.episode.t_f = e.value("t_f", c.episode.t_f);
    c.episode.t_h = e.value("t_h", c.episode.t_h);
    c.episode.max_steps = e.value("max_steps", c.episode.max_steps);
    c.episode.seed = e.value("seed", c.episode.seed);
    c.episode.gamma = e.value("gamma", c.episode.gamma);
    c.episode.hold_k = e.value("hold_k", c.episode.hold_k);
    c.episode.freeze_ordering = e.value("freeze_ordering", c.episode.freeze_ordering);
  }
  if (j.contains("dims")) {
    const auto& d = j["dims"];
    detail::check_fields(d, {"d_z", "d_c", "waypoints"}, "dims");
    c.dims.d_z = d.value("d_z", c.dims.d_z);
    c.dims.d_c = d.value("d_c", c.dims.d_c);
    c.dims.waypoints = d.value("waypoints", c.dims.waypoints);
  }
  c.dims.t_f = c.episode.t_f;
  c.dims.t_h = c.episode.t_h;
  if (j.contains("bounds")) {
    const auto& b = j["bounds"];
    detail::check_fields(b, {"accel_min", "accel_max", "steer_max"}, "bounds");
    c.bounds.accel_min = b.value("accel_min", c.bounds.accel_min);
    c.bounds.accel_max = b.value("accel_max", c.bounds.accel_max);
    c.bounds.steer_max = b.value("steer_max", c.bounds.steer_max);
  }
  if (j.contains("expert")) {
    const auto& x = j["expert"];
    detail::check_fields(x, {"idm", "pursuit", "recovery_radius", "signal_horizon"}, "expert");
    if (x.contains("idm")) {
      const auto& i = x["idm"];
      detail::check_fields(i, {"v0", "headway", "s0", "a_idm", "b", "exponent"}, "idm");
      c.expert.idm.v0 = i.value("v0", c.expert.idm.v0);
      c.expert.idm.headway = i.value("headway", c.expert.idm.headway);
      c.expert.idm.s0 = i.value("s0", c.expert.idm.s0);
      c.expert.idm.a_idm = i.value("a_idm", c.expert.idm.a_idm);
      c.expert.idm.b = i.value("b", c.expert.idm.b);
      c.expert.idm.exponent = i.value("exponent", c.expert.idm.exponent);
    }
    if (x.contains("pursuit")) {
      const auto& pp = x["pursuit"];
      detail::check_fields(pp, {"lookahead_base", "lookahead_gain"}, "pursuit");
      c.expert.pursuit.lookahead_base = pp.value("lookahead_base", c.expert.pursuit.lookahead_base);
      c.expert.pursuit.lookahead_gain = pp.value("lookahead_gain", c.expert.pursuit.lookahead_gain);
    }
    c.expert.recovery_radius = x.value("recovery_radius", c.expert.recovery_radius);
    c.expert.signal_horizon = x.value("signal_horizon", c.expert.signal_horizon);
  }
  c.expert.bounds = c.bounds;
  if (j.contains("rewards")) {
    const auto& r = j["rewards"];
    detail::check_fields(r, {"progress", "collision", "accel", "ttc"}, "rewards");
    c.rewards.progress = r.value("progress", c.rewards.progress);
    c.rewards.collision = r.value("collision", c.rewards.collision);
    c.rewards.accel = r.value("accel", c.rewards.accel);
    c.rewards.ttc = r.value("ttc", c.rewards.ttc);
    if (c.rewards.collision < 0 || c.rewards.accel < 0 || c.rewards.ttc < 0)
      throw ValidationError("reward weights must be >= 0");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::check_fields(t,
                         {"epochs", "lr_high", "lr_low", "waves", "batch", "sample_stride",
                          "episodes_per_epoch", "lambda_s", "lambda_c"},
                         "train");
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.lr_high = t.value("lr_high", c.train.lr_high);
    c.train.lr_low = t.value("lr_low", c.train.lr_low);
    c.train.waves = t.value("waves", c.train.waves);
    c.train.batch = t.value("batch", c.train.batch);
    c.train.sample_stride = t.value("sample_stride", c.train.sample_stride);
    c.train.episodes_per_epoch = t.value("episodes_per_epoch", c.train.episodes_per_epoch);
    c.train.lambda_s = t.value("lambda_s", c.train.lambda_s);
    c.train.lambda_c = t.value("lambda_c", c.train.lambda_c);
    if (c.train.lambda_s < 0 || c.train.lambda_c < 0)
      throw ValidationError("loss weights must be >= 0");
  }
  return c;
}

// ---- Trajectory logs: line-delimited, 17-significant-digit floats ----

inline constexpr const char* kLogHeader = "time,agent,x,y,heading,speed,accel,steer,maneuver,reward";

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string write_log(const std::vector<StepRecord>& records) {
  std::ostringstream out;
  out << kLogHeader << "\n";
  for (const auto& rec : records) {
    for (const auto& ar : rec.agents) {
      out << format_g17(rec.time) << ',' << ar.agent_id << ',' << format_g17(ar.state.x) << ','
          << format_g17(ar.state.y) << ',' << format_g17(ar.state.heading) << ','
          << format_g17(ar.state.speed) << ',' << format_g17(ar.control.accel) << ','
          << format_g17(ar.control.steer) << ',' << maneuver_name(ar.maneuver) << ','
          << format_g17(ar.reward) << "\n";
    }
  }
  return out.str();
}

// Rebuilds records from a log. Vehicle geometry and routes are not part of
// the log; agent ids map to the scenario's time-sorted spawn list.
inline std::vector<StepRecord> parse_log(const std::string& text, const Scenario* scenario = nullptr) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty log");
  if (line != kLogHeader) throw ValidationError("bad log header: " + line);

  std::vector<SpawnEvent> spawns;
  if (scenario) {
    spawns = scenario->spawns;
    std::stable_sort(spawns.begin(), spawns.end(),
                     [](const SpawnEvent& a, const SpawnEvent& b) { return a.time < b.time; });
  }

  std::vector<StepRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw ValidationError("bad log row: " + line);
    AgentRecord ar;
    const double time = std::stod(cells[0]);
    ar.agent_id = std::stoi(cells[1]);
    ar.state.x = std::stod(cells[2]);
    ar.state.y = std::stod(cells[3]);
    ar.state.heading = std::stod(cells[4]);
    ar.state.speed = std::stod(cells[5]);
    ar.control.accel = std::stod(cells[6]);
    ar.control.steer = std::stod(cells[7]);
    ar.maneuver = maneuver_from_name(cells[8]);
    ar.reward = std::stod(cells[9]);
    if (scenario) {
      ar.state.wheelbase = scenario->defaults.wheelbase;
      ar.state.half_length = scenario->defaults.half_length;
      ar.state.half_width = scenario->defaults.half_width;
      if (ar.agent_id >= 0 && ar.agent_id < static_cast<int>(spawns.size()))
        ar.state.route_id = spawns[static_cast<std::size_t>(ar.agent_id)].route;
    }
    if (records.empty() || std::abs(records.back().time - time) > 1e-12) {
      StepRecord rec;
      rec.time = time;
      records.push_back(std::move(rec));
    }
    records.back().agents.push_back(std::move(ar));
  }
  return records;
}

// ---- Parameter checkpoints ----
// 16-byte header: 4-byte magic, u32 format version (LE), u64 count (LE),
// then count doubles, little-endian.

inline void write_checkpoint(const std::string& path, const char magic[4],
                             const std::vector<double>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open checkpoint for writing: " + path);
  out.write(magic, 4);
  const std::uint32_t version = 1;
  const std::uint64_t count = params.size();
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&count), 8);
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!out) throw ValidationError("checkpoint write failed: " + path);
}

inline std::vector<double> read_checkpoint(const std::string& path, const char magic[4]) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  char m[4];
  in.read(m, 4);
  if (!in || std::memcmp(m, magic, 4) != 0)
    throw ValidationError("bad checkpoint magic in " + path);
  std::uint32_t version = 0;
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&count), 8);
  if (!in || version != 1) throw ValidationError("unsupported checkpoint version in " + path);
  std::vector<double> params(count);
  in.read(reinterpret_cast<char*>(params.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw ValidationError("truncated checkpoint: " + path);
  return params;
}

inline constexpr char kMagicRealizer[4] = {'H', 'S', 'I', 'M'};
inline constexpr char kMagicHigh[4] = {'H', 'S', 'H', 'I'};

// ---- Metrics report ----

inline std::string serialize_report(const MetricsReport& r) {
  std::ostringstream out;
  out << "avg_speed " << format_g17(r.avg_speed) << "\n"
      << "hard_accel_per_km " << format_g17(r.hard_accel_per_km) << "\n"
      << "sharp_turn_per_km " << format_g17(r.sharp_turn_per_km) << "\n"
      << "safety_flag_per_km " << format_g17(r.safety_flag_per_km) << "\n"
      << "collision_per_km " << format_g17(r.collision_per_km) << "\n"
      << "ade " << format_g17(r.ade) << "\n"
      << "total_distance " << format_g17(r.total_distance) << "\n"
      << "zero_distance " << (r.zero_distance ? 1 : 0) << "\n";
  return out.str();
}

// ---- SVG rendering ----

struct RenderOptions {
  int stride = 10;
  double scale = 6.0;  // px per meter
  double pad = 20.0;
};

namespace detail {

struct WorldBox {
  double minx = 0, miny = 0, maxx = 1, maxy = 1;
};

inline WorldBox world_box(const Scenario& sc) {
  WorldBox b;
  bool first = true;
  for (const auto& l : sc.network.lanes) {
    for (const auto& p : l.centerline.points()) {
      if (first) {
        b = {p.x, p.y, p.x, p.y};
        first = false;
      }
      b.minx = std::min(b.minx, p.x);
      b.miny = std::min(b.miny, p.y);
      b.maxx = std::max(b.maxx, p.x);
      b.maxy = std::max(b.maxy, p.y);
    }
  }
  return b;
}

}  // namespace detail

// One SVG document per `stride` steps: lanes, oriented vehicle rectangles,
// and a red outline on vehicles with TTC below the safety threshold.
inline std::vector<std::string> render_frames(const std::vector<StepRecord>& records,
                                              const Scenario& scenario,
                                              const RenderOptions& opt = {}) {
  const auto box = detail::world_box(scenario);
  const double w = (box.maxx - box.minx) * opt.scale + 2 * opt.pad;
  const double h = (box.maxy - box.miny) * opt.scale + 2 * opt.pad;
  auto sx = [&](double x) { return (x - box.minx) * opt.scale + opt.pad; };
  auto sy = [&](double y) { return (box.maxy - y) * opt.scale + opt.pad; };

  std::vector<std::string> frames;
  for (std::size_t s = 0; s < records.size() || (records.empty() && s == 0);
       s += static_cast<std::size_t>(opt.stride)) {
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"#f4f4f4\"/>\n";
    for (const auto& l : scenario.network.lanes) {
      svg << "<polyline fill=\"none\" stroke=\"#b0b0b0\" stroke-width=\""
          << l.width * opt.scale << "\" stroke-linecap=\"round\" points=\"";
      for (const auto& p : l.centerline.points()) svg << sx(p.x) << ',' << sy(p.y) << ' ';
      svg << "\"/>\n";
      svg << "<polyline fill=\"none\" stroke=\"#ffffff\" stroke-width=\"1\" "
             "stroke-dasharray=\"6,6\" points=\"";
      for (const auto& p : l.centerline.points()) svg << sx(p.x) << ',' << sy(p.y) << ' ';
      svg << "\"/>\n";
    }
    if (s < records.size()) {
      const StepRecord& rec = records[s];
      SceneState scene;
      scene.time = rec.time;
      for (const auto& ar : rec.agents) scene.agents.push_back(ar.state);
      for (std::size_t i = 0; i < rec.agents.size(); ++i) {
        const auto& ar = rec.agents[i];
        double min_ttc = std::numeric_limits<double>::infinity();
        for (std::size_t jj = 0; jj < rec.agents.size(); ++jj)
          if (jj != i) min_ttc = std::min(min_ttc, compute_ttc(scene, i, jj));
        const bool flagged = min_ttc < kTtcThreshold;
        const double deg = -ar.state.heading * 180.0 / M_PI;
        svg << "<g transform=\"translate(" << sx(ar.state.x) << ' ' << sy(ar.state.y)
            << ") rotate(" << deg << ")\"><rect x=\"" << -ar.state.half_length * opt.scale
            << "\" y=\"" << -ar.state.half_width * opt.scale << "\" width=\""
            << 2 * ar.state.half_length * opt.scale << "\" height=\""
            << 2 * ar.state.half_width * opt.scale << "\" fill=\"#3a6ea5\" stroke=\""
            << (flagged ? "#d62728" : "#202020") << "\" stroke-width=\""
            << (flagged ? 2.5 : 1.0) << "\"/></g>\n";
        svg << "<text x=\"" << sx(ar.state.x) + 4 << "\" y=\"" << sy(ar.state.y) - 4
            << "\" font-size=\"9\">" << ar.agent_id << ':' << maneuver_name(ar.maneuver)
            << "</text>\n";
      }
      svg << "<text x=\"6\" y=\"14\" font-size=\"11\">t=" << format_g17(rec.time) << "s</text>\n";
    }
    svg << "</svg>\n";
    frames.push_back(svg.str());
    if (records.empty()) break;
  }
  return frames;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open file for writing: " + path);
  out << content;
  if (!out) throw ValidationError("write failed: " + path);
}

}  // namespace hsim
