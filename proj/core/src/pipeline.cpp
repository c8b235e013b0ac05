#include "mergecast/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "mergecast/error.hpp"
#include "mergecast/eval.hpp"
#include "mergecast/format.hpp"
#include "mergecast/rng.hpp"
#include "mergecast/rollout.hpp"

namespace mergecast {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

void check_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ParameterError(std::string(where) + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ParameterError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (auto it = obj.find(key); it != obj.end()) out = it->get<T>();
}

void read_range(const json& obj, const char* key, double& lo, double& hi) {
  if (auto it = obj.find(key); it != obj.end()) {
    if (!it->is_array() || it->size() != 2) throw ParameterError(std::string(key) + " must be a [lo, hi] pair");
    lo = (*it)[0].get<double>();
    hi = (*it)[1].get<double>();
    if (!(lo <= hi)) throw ParameterError(std::string(key) + " must satisfy lo <= hi");
  }
}

ingest::ColumnRef column_ref(const json& v) {
  ingest::ColumnRef c;
  if (v.is_number_integer()) c.index = v.get<int>();
  else c.name = v.get<std::string>();
  return c;
}

ingest::Schema parse_schema(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() != "canonical") throw ParameterError("schema must be \"canonical\" or an object");
    return ingest::Schema::canonical();
  }
  check_keys(j, "data.schema", {"delimiter", "has_header", "columns", "time_scale", "length_scale", "lanes"});
  ingest::Schema s;
  std::string delim = ",";
  read(j, "delimiter", delim);
  if (delim == "whitespace") delim = " ";
  if (delim.size() != 1) throw ParameterError("delimiter must be one character or \"whitespace\"");
  s.delimiter = delim[0];
  read(j, "has_header", s.has_header);
  read(j, "time_scale", s.time_scale);
  read(j, "length_scale", s.length_scale);
  if (auto it = j.find("lanes"); it != j.end()) {
    for (const auto& l : *it) s.lanes.insert(l.get<int>());
  }
  const auto& cols = j.at("columns");
  check_keys(cols, "data.schema.columns", {"vehicle_id", "timestamp", "x", "y", "lane_id", "v", "u", "a", "e"});
  auto set = [&](const char* key, ingest::ColumnRef& ref) {
    if (auto it = cols.find(key); it != cols.end()) ref = column_ref(*it);
  };
  set("vehicle_id", s.vehicle_id);
  set("timestamp", s.timestamp);
  set("x", s.x);
  set("y", s.y);
  set("lane_id", s.lane_id);
  set("v", s.v);
  set("u", s.u);
  set("a", s.a);
  set("e", s.e);
  return s;
}

}  // namespace

PipelineConfig parse_pipeline_config(std::string_view json_text, const fs::path& config_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParameterError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  c.config_dir = config_dir;
  try {
    check_keys(j, "config", {"seed", "output_dir", "geometry", "data", "synthetic", "smoothing", "scenes", "lstm",
                             "cf", "forest", "forecast"});
    read(j, "seed", c.seed);
    if (auto it = j.find("output_dir"); it != j.end()) c.output_dir = it->get<std::string>();

    if (auto it = j.find("geometry"); it != j.end()) {
      check_keys(*it, "geometry", {"x_end", "merge_start", "y_cur", "y_tar", "segment_length", "v_max", "dt",
                                   "ramp_lane", "target_lane", "influence_lo", "influence_hi"});
      auto& g = c.geometry;
      read(*it, "x_end", g.x_end);
      read(*it, "merge_start", g.merge_start);
      read(*it, "y_cur", g.y_cur);
      read(*it, "y_tar", g.y_tar);
      read(*it, "segment_length", g.segment_length);
      read(*it, "v_max", g.v_max);
      read(*it, "dt", g.dt);
      read(*it, "ramp_lane", g.ramp_lane);
      read(*it, "target_lane", g.target_lane);
      read(*it, "influence_lo", g.influence_lo);
      read(*it, "influence_hi", g.influence_hi);
    }
    c.geometry.validate();

    const auto& d = j.at("data");
    check_keys(d, "data", {"schema", "native_dt", "windows", "train_windows", "test_window"});
    if (auto it = d.find("schema"); it != d.end()) c.schema = parse_schema(*it);
    read(d, "native_dt", c.native_dt);
    read(d, "train_windows", c.train_windows);
    read(d, "test_window", c.test_window);
    for (const auto& [key, val] : d.at("windows").items()) {
      long w = 0;
      if (!parse_int(key, w)) throw ParameterError("window key '" + key + "' is not an integer");
      c.windows[static_cast<int>(w)] = val.get<std::string>();
    }
    for (int w : c.train_windows) {
      if (!c.windows.count(w)) throw ParameterError("training window " + std::to_string(w) + " has no file");
    }
    if (!c.windows.count(c.test_window)) throw ParameterError("test window has no file");
    if (std::find(c.train_windows.begin(), c.train_windows.end(), c.test_window) != c.train_windows.end()) {
      throw ParameterError("the test window must not be a training window");
    }

    if (auto it = j.find("synthetic"); it != j.end()) {
      check_keys(*it, "synthetic", {"dt", "duration", "ramp_headway", "adjacent_headway", "ramp_speed",
                                    "adjacent_speed", "merge_x", "lateral_lead", "position_noise"});
      synth::MergeTrafficConfig t;
      read(*it, "dt", t.dt);
      read(*it, "duration", t.duration);
      read(*it, "ramp_headway", t.ramp_headway);
      read(*it, "adjacent_headway", t.adjacent_headway);
      read_range(*it, "ramp_speed", t.ramp_speed_lo, t.ramp_speed_hi);
      read_range(*it, "adjacent_speed", t.adjacent_speed_lo, t.adjacent_speed_hi);
      read_range(*it, "merge_x", t.merge_x_lo, t.merge_x_hi);
      read(*it, "lateral_lead", t.lateral_lead);
      read(*it, "position_noise", t.position_noise);
      c.synthetic = t;
    }

    if (auto it = j.find("smoothing"); it != j.end()) {
      check_keys(*it, "smoothing", {"window", "poly_order"});
      read(*it, "window", c.smoothing.window);
      read(*it, "poly_order", c.smoothing.poly_order);
    }
    if (auto it = j.find("scenes"); it != j.end()) {
      check_keys(*it, "scenes", {"window_len", "samples_per_vehicle"});
      read(*it, "window_len", c.window_len);
      read(*it, "samples_per_vehicle", c.samples_per_vehicle);
    }
    if (auto it = j.find("lstm"); it != j.end()) {
      check_keys(*it, "lstm", {"layers", "hidden", "scale", "learning_rate", "beta1", "beta2", "epsilon",
                               "huber_delta", "batch_size", "epochs", "clip_norm", "lr_decay", "max_windows"});
      read(*it, "layers", c.lstm_shape.layers);
      read(*it, "hidden", c.lstm_shape.hidden);
      read(*it, "scale", c.lstm_norm.scale);
      auto& t = c.lstm_train;
      read(*it, "learning_rate", t.learning_rate);
      read(*it, "beta1", t.beta1);
      read(*it, "beta2", t.beta2);
      read(*it, "epsilon", t.adam_epsilon);
      read(*it, "huber_delta", t.huber_delta);
      read(*it, "batch_size", t.batch_size);
      read(*it, "epochs", t.epochs);
      read(*it, "clip_norm", t.clip_norm);
      read(*it, "lr_decay", t.lr_decay);
      read(*it, "max_windows", c.lstm_max_windows);
    }
    if (auto it = j.find("cf"); it != j.end()) {
      check_keys(*it, "cf", {"families", "starts", "max_evals_per_start", "f_tol", "x_tol"});
      if (auto f = it->find("families"); f != it->end()) {
        c.families.clear();
        for (const auto& name : *f) {
          auto fam = cf::family_from_name(name.get<std::string>());
          if (!fam) throw ParameterError("unknown model family '" + name.get<std::string>() + "'");
          c.families.push_back(*fam);
        }
      }
      read(*it, "starts", c.fit.starts);
      read(*it, "max_evals_per_start", c.fit.max_evals_per_start);
      read(*it, "f_tol", c.fit.f_tol);
      read(*it, "x_tol", c.fit.x_tol);
    }
    if (auto it = j.find("forest"); it != j.end()) {
      check_keys(*it, "forest", {"n_trees", "max_depth", "feature_subset_size", "min_samples_leaf"});
      read(*it, "n_trees", c.forest.n_trees);
      read(*it, "max_depth", c.forest.tree.max_depth);
      read(*it, "feature_subset_size", c.forest.tree.feature_subset_size);
      read(*it, "min_samples_leaf", c.forest.tree.min_samples_leaf);
    }
    if (auto it = j.find("forecast"); it != j.end()) {
      check_keys(*it, "forecast", {"horizon"});
      read(*it, "horizon", c.horizon);
    }
  } catch (const json::exception& e) {
    throw ParameterError(std::string("config: ") + e.what());
  }
  if (c.families.empty()) throw ParameterError("config names no model family");
  if (!(c.horizon >= 0.0) || c.horizon > 15.0) throw ParameterError("forecast horizon must lie in [0, 15] s");
  c.source = j.dump();
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParameterError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_pipeline_config(ss.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

fs::path resolve_window(const PipelineConfig& cfg, int window) {
  auto it = cfg.windows.find(window);
  if (it == cfg.windows.end()) throw ParameterError("no file configured for window " + std::to_string(window));
  std::string p = it->second;
  const std::string token = "{out}";
  if (auto pos = p.find(token); pos != std::string::npos) {
    p.replace(pos, token.size(), cfg.output_dir.string());
    return fs::path(p);
  }
  fs::path path(p);
  return path.is_absolute() ? path : cfg.config_dir / path;
}

std::string_view stage_name(Stage s) noexcept {
  switch (s) {
    case Stage::kSynth: return "synth";
    case Stage::kIngest: return "ingest";
    case Stage::kScenes: return "scenes";
    case Stage::kPretrain: return "pretrain";
    case Stage::kFit: return "fit";
    case Stage::kForecast: return "forecast";
    case Stage::kClassifyTrain: return "classify-train";
    case Stage::kEvaluate: return "evaluate";
    case Stage::kReport: return "report";
  }
  return "?";
}

std::optional<Stage> stage_from_name(std::string_view name) noexcept {
  for (auto s : {Stage::kSynth, Stage::kIngest, Stage::kScenes, Stage::kPretrain, Stage::kFit, Stage::kForecast,
                 Stage::kClassifyTrain, Stage::kEvaluate, Stage::kReport}) {
    if (stage_name(s) == name) return s;
  }
  return std::nullopt;
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

// ---------------------------------------------------------------------------
// Bundle files

namespace {

fs::path tracks_path(const PipelineConfig& c, int w) {
  return c.output_dir / "tracks" / ("window_" + std::to_string(w) + ".csv");
}
fs::path scenes_path(const PipelineConfig& c) { return c.output_dir / "scenes" / "test_scenes.jsonl"; }
fs::path network_path(const PipelineConfig& c, lstm::LaneTag lane) {
  return c.output_dir / "models" / ("lstm_" + std::string(lstm::lane_tag_name(lane)) + ".json");
}
fs::path neighbors_path(const PipelineConfig& c) { return c.output_dir / "predictions" / "neighbors.csv"; }
fs::path fits_path(const PipelineConfig& c, cf::Family f) {
  return c.output_dir / "fits" / ("cf_" + std::string(cf::family_name(f)) + ".csv");
}
fs::path forecast_path(const PipelineConfig& c, cf::Family f) {
  return c.output_dir / "forecasts" / ("forecast_" + std::string(cf::family_name(f)) + ".csv");
}
fs::path registry_path(const PipelineConfig& c) { return c.output_dir / "forests" / "registry.jsonl"; }
fs::path records_path(const PipelineConfig& c) { return c.output_dir / "classifications" / "predictions.csv"; }
fs::path metrics_dir(const PipelineConfig& c) { return c.output_dir / "metrics"; }
fs::path stats_path(const PipelineConfig& c, Stage s) {
  return c.output_dir / "stats" / (std::string(stage_name(s)) + ".json");
}

std::ofstream open_out(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write " + p.string());
  return f;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error("missing " + p.string() + "; run the earlier stages first");
  return f;
}

void write_stats(const PipelineConfig& c, Stage s, const json& stats) {
  auto out = open_out(stats_path(c, s));
  out << stats.dump(2) << '\n';
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double cell_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  if (!parse_double(s, v)) throw ParseError(line, "expected a number, got '" + s + "'");
  return v;
}

long cell_int(const std::string& s, std::size_t line) {
  long v = 0;
  if (!parse_int(s, v)) throw ParseError(line, "expected an integer, got '" + s + "'");
  return v;
}

/// Rows of a CSV file after its header.
std::vector<std::vector<std::string>> read_csv(const fs::path& p, std::size_t columns) {
  auto in = open_in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (++n == 1 || line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != columns) {
      throw ParseError(n, p.filename().string() + ": expected " + std::to_string(columns) + " fields");
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::vector<Track> load_window_tracks(const PipelineConfig& c, int w) { return ingest::read_tracks(tracks_path(c, w)); }

std::vector<Scene> load_test_scenes(const PipelineConfig& c, const std::vector<Track>& test_tracks) {
  auto in = open_in(scenes_path(c));
  const auto records = read_scene_archive(in);
  return restore_scenes(records, TrackIndex(test_tracks));
}

std::vector<std::string> param_names(cf::Family f) {
  if (f == cf::Family::kIdm) return {"s0", "h_d", "a_max", "b_max", "v_d", "delta"};
  return {"alpha", "beta", "gamma"};
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

lstm::LaneTag lane_tag_for(int lane, const SceneGeometry& g) {
  return lane == g.ramp_lane ? lstm::LaneTag::kRamp : lstm::LaneTag::kAdjacent;
}

// ---------------------------------------------------------------------------
// Stages

json stage_synth(const PipelineConfig& c) {
  if (!c.synthetic) throw ParameterError("config has no synthetic section");
  json stats = json::object();
  for (const auto& [w, _] : c.windows) {
    auto t = *c.synthetic;
    t.geometry = c.geometry;
    t.seed = derive_seed(c.seed, "synth", w);
    t.first_id = w * 10000 + 1;
    const auto scenario = synth::make_merge_scenario(t);
    const auto tracks = synth::generate_synthetic_corpus(scenario);
    const auto path = resolve_window(c, w);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    ingest::write_tracks(path, tracks);
    std::size_t lc = 0;
    for (const auto& v : scenario.vehicles) lc += v.lc_time.has_value();
    stats[std::to_string(w)] = {{"vehicles", tracks.size()}, {"lane_changes", lc}};
  }
  return stats;
}

json stage_ingest(const PipelineConfig& c) {
  json stats = json::object();
  ingest::IngestConfig ic;
  ic.schema = c.schema;
  ic.native_dt = c.native_dt;
  ic.target_dt = c.geometry.dt;
  ic.smoothing = c.smoothing;
  for (const auto& [w, _] : c.windows) {
    const auto res = ingest::ingest_file(resolve_window(c, w), ic);
    auto out = open_out(tracks_path(c, w));
    ingest::write_tracks(out, res.tracks);
    std::size_t on_ramp = 0;
    for (const auto& t : res.tracks) on_ramp += is_on_ramp_vehicle(t, c.geometry);
    stats[std::to_string(w)] = {{"tracks", res.tracks.size()}, {"dropped", res.dropped}, {"on_ramp", on_ramp}};
  }
  return stats;
}

json stage_scenes(const PipelineConfig& c) {
  const auto tracks = load_window_tracks(c, c.test_window);
  const auto ex = extract_scenes(tracks, c.geometry, c.window_len, c.samples_per_vehicle, derive_seed(c.seed, "scenes"));
  if (ex.scenes.empty()) throw Error("no on-ramp vehicle in the test window is long enough for a scene");
  auto out = open_out(scenes_path(c));
  write_scene_archive(out, ex.scenes);
  return {{"scenes", ex.scenes.size()}, {"skipped_short", ex.skipped_short}};
}

/// The 20 observed positions of a neighbor ending at the anchor, taken from
/// its track. Samples before the neighbor entered are extrapolated backwards
/// at its first observed velocity.
std::vector<double> neighbor_inputs(const Scene& sc, NeighborRole role, bool& extrapolated) {
  const auto r = role_index(role);
  const auto& tr = sc.anchor_tracks[r];
  std::vector<double> xs(lstm::kWindowInput);
  extrapolated = false;
  const std::size_t first = sc.anchor_step + 1 - lstm::kWindowInput;
  for (std::size_t i = 0; i < lstm::kWindowInput; ++i) {
    const double t = sc.central.time(first + i);
    const long k = tr.index_at(t);
    if (k >= 0) {
      xs[i] = tr.states[static_cast<std::size_t>(k)].x;
      continue;
    }
    extrapolated = true;
    if (tr.empty()) throw Error("neighbor track is empty");
    const double v = tr.size() > 1 ? (tr.states[1].x - tr.states[0].x) / tr.dt : tr.states[0].v;
    xs[i] = tr.states[0].x + v * (t - tr.t0);
  }
  return xs;
}

/// Longest run of samples inside the ramp influence area.
Track influence_portion(const Track& t, const SceneGeometry& g) {
  std::size_t best_start = 0, best_len = 0, start = 0;
  for (std::size_t k = 0; k <= t.size(); ++k) {
    const bool inside = k < t.size() && t.states[k].x >= g.influence_lo && t.states[k].x <= g.influence_hi;
    if (inside) continue;
    if (k - start > best_len) {
      best_start = start;
      best_len = k - start;
    }
    start = k + 1;
  }
  Track out;
  out.vehicle_id = t.vehicle_id;
  out.dt = t.dt;
  out.t0 = t.time(best_start);
  out.states.assign(t.states.begin() + static_cast<long>(best_start),
                    t.states.begin() + static_cast<long>(best_start + best_len));
  out.lane_ids.assign(t.lane_ids.begin() + static_cast<long>(best_start),
                      t.lane_ids.begin() + static_cast<long>(best_start + best_len));
  return out;
}

json stage_pretrain(const PipelineConfig& c) {
  std::vector<Track> ramp, adjacent;
  for (int w : c.train_windows) {
    for (auto& t : load_window_tracks(c, w)) {
      if (t.empty()) continue;
      if (is_on_ramp_vehicle(t, c.geometry)) ramp.push_back(std::move(t));
      else if (t.lane_ids.front() == c.geometry.target_lane) {
        auto clipped = influence_portion(t, c.geometry);
        if (!clipped.empty()) adjacent.push_back(std::move(clipped));
      }
    }
  }

  json stats = json::object();
  std::map<lstm::LaneTag, lstm::Network> nets;
  auto loss_out = open_out(c.output_dir / "models" / "lstm_loss.csv");
  loss_out << "lane,epoch,loss\n";
  for (auto lane : {lstm::LaneTag::kRamp, lstm::LaneTag::kAdjacent}) {
    const auto tag = static_cast<std::int64_t>(lane);
    auto windows = lstm::make_windows(lane == lstm::LaneTag::kRamp ? ramp : adjacent, c.lstm_norm);
    const std::size_t available = windows.size();
    if (windows.empty()) {
      throw TrainingError("no training windows for the " + std::string(lstm::lane_tag_name(lane)) + " lane");
    }
    if (c.lstm_max_windows > 0 && windows.size() > c.lstm_max_windows) {
      Rng rng(derive_seed(c.seed, "lstm-windows", tag));
      rng.shuffle(windows);
      windows.resize(c.lstm_max_windows);
    }
    lstm::Network net(c.lstm_shape, lane, derive_seed(c.seed, "lstm-init", tag), c.lstm_norm);
    auto tc = c.lstm_train;
    tc.seed = derive_seed(c.seed, "lstm-train", tag);
    const auto res = lstm::train(net, windows, tc);
    lstm::save_network(network_path(c, lane), net);
    for (std::size_t e = 0; e < res.loss_history.size(); ++e) {
      loss_out << lstm::lane_tag_name(lane) << ',' << e + 1 << ',' << fmt_double(res.loss_history[e]) << '\n';
    }
    stats[std::string(lstm::lane_tag_name(lane))] = {
        {"windows_available", available},
        {"windows_used", windows.size()},
        {"final_loss", res.loss_history.empty() ? 0.0 : res.loss_history.back()}};
    nets.emplace(lane, std::move(net));
  }

  const auto tracks = load_window_tracks(c, c.test_window);
  const auto scenes = load_test_scenes(c, tracks);
  auto out = open_out(neighbors_path(c));
  out << "scene_id,role,step,x,v,a\n";
  std::size_t predicted = 0, virtual_roles = 0, extrapolated = 0;
  for (const auto& sc : scenes) {
    const auto& anchor = sc.neighbors[sc.anchor_step];
    for (auto role : kAllRoles) {
      const auto& nb = anchor[role_index(role)];
      std::vector<VehicleState> seq(kHorizonSteps + 1);
      if (nb.is_virtual) {
        ++virtual_roles;
        std::fill(seq.begin(), seq.end(), nb.state);
      } else {
        bool extra = false;
        auto inputs = neighbor_inputs(sc, role, extra);
        extrapolated += extra;
        const auto lane = lane_tag_for(nb.lane_id, c.geometry);
        const auto pred = lstm::pretrain_neighbor(nets.at(lane), inputs, kHorizonSteps, lane);
        std::vector<double> xs(inputs);
        xs.insert(xs.end(), pred.begin(), pred.end());
        const auto kin = lstm::derive_neighbor_kinematics(xs, sc.central.dt);
        seq[0] = nb.state;
        for (std::size_t k = 1; k <= kHorizonSteps; ++k) {
          const auto idx = lstm::kWindowInput - 1 + k;
          seq[k].x = xs[idx];
          seq[k].v = kin.velocity[idx];
          seq[k].a = kin.acceleration[idx];
        }
        ++predicted;
      }
      for (std::size_t k = 0; k < seq.size(); ++k) {
        out << sc.scene_id << ',' << role_name(role) << ',' << k << ',' << fmt_double(seq[k].x) << ','
            << fmt_double(seq[k].v) << ',' << fmt_double(seq[k].a) << '\n';
      }
    }
  }
  stats["neighbors"] = {{"predicted", predicted}, {"virtual", virtual_roles}, {"extrapolated_inputs", extrapolated}};
  return stats;
}

std::vector<cf::FitSample> fit_window(const Scene& sc) {
  std::vector<cf::FitSample> window;
  const std::size_t first = sc.anchor_step + 1 - cf::kFitWindowSteps;
  for (std::size_t k = first; k <= sc.anchor_step; ++k) {
    const auto& nb = sc.neighbors[k];
    std::array<VehicleState, 4> adj;
    for (std::size_t i = 0; i < 4; ++i) adj[i] = nb[role_index(kAdjacentRoles[i])].state;
    const auto& self = sc.central.states[k];
    const auto choice = rollout::select_nearest_adjacent_leader(self.x, adj);
    const auto leader = rollout::actual_leader(nb[role_index(NeighborRole::kLeader)].state, choice.state,
                                               sc.geometry.x_end);
    window.push_back(cf::FitSample{self, leader, self.a});
  }
  return window;
}

json stage_fit(const PipelineConfig& c) {
  const auto tracks = load_window_tracks(c, c.test_window);
  const auto scenes = load_test_scenes(c, tracks);
  json stats = json::object();
  for (auto fam : c.families) {
    auto out = open_out(fits_path(c, fam));
    out << "scene_id";
    for (const auto& n : param_names(fam)) out << ',' << n;
    out << ",mse,converged,iterations\n";
    std::vector<double> mses;
    std::size_t converged = 0;
    for (const auto& sc : scenes) {
      auto opts = c.fit;
      opts.seed = derive_seed(c.seed, "cf-fit", sc.scene_id);
      const auto window = fit_window(sc);
      const auto fit = cf::fit_cf(fam, window, opts);
      out << sc.scene_id;
      for (double v : cf::to_vector(fit.params)) out << ',' << fmt_double(v);
      out << ',' << fmt_double(fit.mse) << ',' << (fit.converged ? 1 : 0) << ',' << fit.iterations << '\n';
      mses.push_back(fit.mse);
      converged += fit.converged;
    }
    stats[std::string(cf::family_name(fam))] = {{"fits", mses.size()}, {"converged", converged}};
  }
  return stats;
}

std::map<int, cf::CfParams> read_fits(const PipelineConfig& c, cf::Family fam) {
  const auto np = cf::parameter_count(fam);
  const auto rows = read_csv(fits_path(c, fam), np + 4);
  std::map<int, cf::CfParams> out;
  std::size_t line = 1;
  for (const auto& r : rows) {
    ++line;
    std::vector<double> x(np);
    for (std::size_t i = 0; i < np; ++i) x[i] = cell_double(r[1 + i], line);
    cf::CfParams p;
    p.params = cf::from_vector(fam, x);
    p.mse = cell_double(r[np + 1], line);
    p.converged = cell_int(r[np + 2], line) != 0;
    p.iterations = static_cast<int>(cell_int(r[np + 3], line));
    out[static_cast<int>(cell_int(r[0], line))] = p;
  }
  return out;
}

std::map<int, rollout::NeighborForecast> read_neighbors(const PipelineConfig& c) {
  const auto rows = read_csv(neighbors_path(c), 6);
  std::map<int, rollout::NeighborForecast> out;
  std::size_t line = 1;
  for (const auto& r : rows) {
    ++line;
    const auto role = role_from_name(r[1]);
    if (!role) throw ParseError(line, "unknown neighbor role '" + r[1] + "'");
    auto& seq = out[static_cast<int>(cell_int(r[0], line))].states[role_index(*role)];
    const auto k = static_cast<std::size_t>(cell_int(r[2], line));
    if (k != seq.size()) throw ParseError(line, "neighbor steps out of order");
    VehicleState s;
    s.x = cell_double(r[3], line);
    s.v = cell_double(r[4], line);
    s.a = cell_double(r[5], line);
    seq.push_back(s);
  }
  return out;
}

std::string flags_string(std::uint32_t flags) {
  std::string s;
  const std::pair<std::uint32_t, const char*> names[] = {
      {rollout::kAccelUpper, "accel_upper"}, {rollout::kAccelLower, "accel_lower"},
      {rollout::kSpeedUpper, "speed_upper"}, {rollout::kSpeedLower, "speed_lower"},
      {rollout::kNonFinite, "non_finite"},   {rollout::kGapSaturated, "gap_saturated"}};
  for (const auto& [bit, name] : names) {
    if (!(flags & bit)) continue;
    if (!s.empty()) s += '|';
    s += name;
  }
  return s;
}

json stage_forecast(const PipelineConfig& c) {
  const auto tracks = load_window_tracks(c, c.test_window);
  const auto scenes = load_test_scenes(c, tracks);
  const auto neighbors = read_neighbors(c);
  json stats = json::object();
  for (auto fam : c.families) {
    const auto fits = read_fits(c, fam);
    auto out = open_out(forecast_path(c, fam));
    out << "scene_id,step,t,x,v,a,leader_role,flags,truth_x\n";
    std::size_t clamped = 0, steps = 0;
    for (const auto& sc : scenes) {
      const auto fit = fits.find(sc.scene_id);
      const auto nb = neighbors.find(sc.scene_id);
      if (fit == fits.end() || nb == neighbors.end()) {
        throw Error("scene " + std::to_string(sc.scene_id) + " lacks a fit or neighbor predictions");
      }
      const auto rc = rollout::make_rollout_config(fit->second, c.horizon, sc.central.dt);
      const auto res = rollout::forecast(sc, nb->second, rc);
      for (std::size_t k = 0; k < res.steps.size(); ++k) {
        const auto& s = res.steps[k];
        const auto truth_idx = sc.anchor_step + k + 1;
        out << sc.scene_id << ',' << k + 1 << ',' << fmt_double(s.t) << ',' << fmt_double(s.state.x) << ','
            << fmt_double(s.state.v) << ',' << fmt_double(s.state.a) << ','
            << (s.leader_role ? role_name(*s.leader_role) : std::string_view("virtual")) << ','
            << flags_string(s.flags) << ',';
        if (truth_idx < sc.central.size()) out << fmt_double(sc.central.states[truth_idx].x);
        out << '\n';
        clamped += (s.flags & (rollout::kAccelUpper | rollout::kAccelLower)) != 0;
        ++steps;
      }
    }
    stats[std::string(cf::family_name(fam))] = {{"scenes", scenes.size()}, {"steps", steps}, {"accel_clamped", clamped}};
  }
  return stats;
}

std::vector<Scene> full_scenes(const PipelineConfig& c, std::span<const int> windows,
                               std::vector<std::vector<Track>>& storage) {
  std::vector<Scene> out;
  for (int w : windows) {
    storage.push_back(load_window_tracks(c, w));
    auto s = build_full_scenes(storage.back(), c.geometry);
    out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  return out;
}

constexpr std::array<forest::Kind, 2> kKinds{forest::Kind::kCumulative, forest::Kind::kExact};

json stage_classify_train(const PipelineConfig& c) {
  std::vector<std::vector<Track>> storage;
  const auto scenes = full_scenes(c, c.train_windows, storage);
  forest::Registry registry;
  json stats = json::object();
  for (auto kind : kKinds) {
    for (int t = 0; t <= forest::kMaxHorizon; ++t) {
      const auto set = forest::build_training_sets(scenes, kind, t, derive_seed(c.seed, "rf-train"), true);
      std::size_t pos = 0;
      for (const auto& s : set.samples) pos += s.label == 1;
      const std::string key = std::string(forest::kind_name(kind)) + "_" + std::to_string(t);
      json entry = {{"positives", pos}, {"negatives", set.samples.size() - pos}};
      if (pos == 0 || pos == set.samples.size()) {
        entry["trained"] = false;
      } else {
        auto fc = c.forest;
        fc.seed = derive_seed(c.seed, "forest", static_cast<std::int64_t>(kind) * 100 + t);
        auto f = forest::train_forest(set.samples, kind, t, fc);
        entry["trained"] = true;
        if (f.oob_accuracy) entry["oob_accuracy"] = *f.oob_accuracy;
        registry.emplace(std::make_pair(kind, t), std::move(f));
      }
      stats[key] = entry;
    }
  }
  fs::create_directories(registry_path(c).parent_path());
  forest::save_registry(registry_path(c), registry);
  return stats;
}

json stage_evaluate(const PipelineConfig& c) {
  std::vector<std::vector<Track>> storage;
  const std::array<int, 1> test{c.test_window};
  const auto scenes = full_scenes(c, test, storage);
  const auto registry = forest::load_registry(registry_path(c));
  eval::TestSets sets;
  for (auto kind : kKinds) {
    for (int t = 0; t <= forest::kMaxHorizon; ++t) {
      sets[{kind, t}] = forest::build_training_sets(scenes, kind, t, derive_seed(c.seed, "rf-test"), true);
    }
  }
  std::vector<eval::ClassificationRecord> records;
  eval::score_classification(registry, sets, &records);
  {
    auto out = open_out(records_path(c));
    eval::write_classification_records(out, records);
  }
  write_metrics(c);
  return {{"test_scenes", scenes.size()}, {"classification_records", records.size()}};
}

json read_json_file(const fs::path& p) {
  auto in = open_in(p);
  return json::parse(in);
}

json stage_report(const PipelineConfig& c) {
  write_metrics(c);
  json manifest;
  manifest["tool"] = "mergecast";
  manifest["version"] = std::string(kVersion);
  manifest["seed"] = c.seed;
  manifest["horizon"] = c.horizon;
  json fams = json::array();
  for (auto f : c.families) fams.push_back(std::string(cf::family_name(f)));
  manifest["families"] = fams;
  manifest["config"] = json::parse(c.source);
  json stages = json::object();
  for (auto s : {Stage::kSynth, Stage::kIngest, Stage::kScenes, Stage::kPretrain, Stage::kFit, Stage::kForecast,
                 Stage::kClassifyTrain, Stage::kEvaluate}) {
    if (fs::exists(stats_path(c, s))) stages[std::string(stage_name(s))] = read_json_file(stats_path(c, s));
  }
  manifest["counts"] = stages;
  json files = json::object();
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(c.output_dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    files[fs::relative(p, c.output_dir).generic_string()] = {{"bytes", fs::file_size(p)}, {"fnv1a64", file_digest(p)}};
  }
  manifest["files"] = files;
  auto out = open_out(c.output_dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  return {{"files", paths.size()}};
}

}  // namespace

void write_metrics(const PipelineConfig& c) {
  const auto dir = metrics_dir(c);
  fs::create_directories(dir);
  const int seconds = static_cast<int>(std::floor(c.horizon + 1e-9));

  {
    auto summary = open_out(dir / "forecast_summary.csv");
    summary << "family,scenes,excluded\n";
    for (auto fam : c.families) {
      const auto rows = read_csv(forecast_path(c, fam), 9);
      std::map<int, eval::ScoredForecast> by_scene;
      std::size_t line = 1;
      for (const auto& r : rows) {
        ++line;
        auto& sf = by_scene[static_cast<int>(cell_int(r[0], line))];
        sf.predicted.push_back(cell_double(r[3], line));
        sf.truth.push_back(r[8].empty() ? std::nan("") : cell_double(r[8], line));
      }
      std::vector<eval::ScoredForecast> results;
      for (auto& [id, sf] : by_scene) {
        sf.scene_id = id;
        results.push_back(std::move(sf));
      }
      const auto score = eval::score_forecast(results, c.geometry.dt, seconds);
      auto out = open_out(dir / ("forecast_" + std::string(cf::family_name(fam)) + ".csv"));
      eval::write_forecast_score(out, score);
      summary << cf::family_name(fam) << ',' << results.size() << ',' << score.excluded << '\n';
    }
  }

  {
    auto out = open_out(dir / "fit_summary.csv");
    out << "family,fits,mean_mse,median_mse,converged\n";
    for (auto fam : c.families) {
      const auto fits = read_fits(c, fam);
      std::vector<double> mses;
      std::size_t converged = 0;
      for (const auto& [_, p] : fits) {
        mses.push_back(p.mse);
        converged += p.converged;
      }
      double mean = 0.0;
      for (double m : mses) mean += m;
      if (!mses.empty()) mean /= static_cast<double>(mses.size());
      out << cf::family_name(fam) << ',' << mses.size() << ',' << fmt_double(mean) << ',' << fmt_double(median(mses))
          << ',' << converged << '\n';
    }
  }

  {
    auto in = open_in(records_path(c));
    const auto records = eval::read_classification_records(in);
    auto score = eval::score_classification_records(records);
    for (auto kind : kKinds) {
      for (int t = 0; t <= forest::kMaxHorizon; ++t) score.try_emplace({kind, t});
    }
    auto out = open_out(dir / "classification.csv");
    eval::write_classification_score(out, score);
  }

  {
    const auto registry = forest::load_registry(registry_path(c));
    auto out = open_out(dir / "importance.csv");
    out << "kind,t";
    for (auto n : forest::kChannelNames) out << ',' << n;
    for (auto n : forest::kVehicleGroupNames) out << ',' << n;
    out << '\n';
    auto feat = open_out(dir / "feature_importance.csv");
    feat << "kind,t,feature,importance\n";
    for (const auto& [key, f] : registry) {
      const auto rep = forest::importance_report(f);
      out << forest::kind_name(key.first) << ',' << key.second;
      for (double v : rep.by_channel) out << ',' << fmt_double(v);
      for (double v : rep.by_vehicle) out << ',' << fmt_double(v);
      out << '\n';
      for (std::size_t i = 0; i < forest::kNumFeatures; ++i) {
        feat << forest::kind_name(key.first) << ',' << key.second << ',' << forest::feature_name(i) << ','
             << fmt_double(f.importance[i]) << '\n';
      }
    }
  }
}

void run_stage(Stage stage, const PipelineConfig& cfg) {
  const std::string name(stage_name(stage));
  try {
    fs::create_directories(cfg.output_dir);
    json stats;
    switch (stage) {
      case Stage::kSynth: stats = stage_synth(cfg); break;
      case Stage::kIngest: stats = stage_ingest(cfg); break;
      case Stage::kScenes: stats = stage_scenes(cfg); break;
      case Stage::kPretrain: stats = stage_pretrain(cfg); break;
      case Stage::kFit: stats = stage_fit(cfg); break;
      case Stage::kForecast: stats = stage_forecast(cfg); break;
      case Stage::kClassifyTrain: stats = stage_classify_train(cfg); break;
      case Stage::kEvaluate: stats = stage_evaluate(cfg); break;
      case Stage::kReport: stage_report(cfg); return;
    }
    write_stats(cfg, stage, stats);
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

void run_pipeline(const PipelineConfig& cfg) {
  if (cfg.synthetic) run_stage(Stage::kSynth, cfg);
  for (auto s : {Stage::kIngest, Stage::kScenes, Stage::kPretrain, Stage::kFit, Stage::kForecast,
                 Stage::kClassifyTrain, Stage::kEvaluate, Stage::kReport}) {
    run_stage(s, cfg);
  }
}

}  // namespace mergecast
