#include "mergecast/scene.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <nlohmann/json.hpp>
#include <ostream>
#include <string>

#include "mergecast/error.hpp"
#include "mergecast/rng.hpp"

namespace mergecast {

using nlohmann::json;

void SceneGeometry::validate() const {
  if (!(x_end > 0.0 && x_end <= segment_length)) throw ParameterError("geometry requires 0 < x_end <= segment_length");
  if (!(dt > 0.0)) throw ParameterError("geometry requires dt > 0");
  if (!(v_max > 0.0)) throw ParameterError("geometry requires v_max > 0");
  if (ramp_lane == target_lane) throw ParameterError("ramp and target lanes must differ");
}

std::string_view role_name(NeighborRole r) noexcept {
  switch (r) {
    case NeighborRole::kLeader: return "l";
    case NeighborRole::kNearestLeader: return "l1";
    case NeighborRole::kNearerLeader: return "l2";
    case NeighborRole::kFollower: return "f";
    case NeighborRole::kNearestFollower: return "f1";
    case NeighborRole::kNearerFollower: return "f2";
  }
  return "?";
}

std::optional<NeighborRole> role_from_name(std::string_view name) noexcept {
  for (auto r : kAllRoles) {
    if (role_name(r) == name) return r;
  }
  return std::nullopt;
}

TrackIndex::TrackIndex(std::span<const Track> tracks) : tracks_(tracks) {
  for (std::size_t i = 0; i < tracks.size(); ++i) by_id_.emplace(tracks[i].vehicle_id, i);
}

const Track* TrackIndex::find(int vehicle_id) const noexcept {
  auto it = by_id_.find(vehicle_id);
  return it == by_id_.end() ? nullptr : &tracks_[it->second];
}

VehicleState place_virtual_vehicle(NeighborRole role, const SceneGeometry& geometry) {
  VehicleState s;
  switch (role) {
    case NeighborRole::kLeader: s.x = geometry.x_end; break;
    case NeighborRole::kNearestLeader:
    case NeighborRole::kNearerLeader: s.x = 500.0; break;
    default: s.x = -500.0; break;
  }
  s.y = is_same_lane_role(role) ? geometry.y_cur : geometry.y_tar;
  return s;
}

int adjacent_lane_of(int central_lane, const SceneGeometry& geometry) noexcept {
  return central_lane == geometry.target_lane ? geometry.ramp_lane : geometry.target_lane;
}

namespace {

struct Candidate {
  double gap;
  int id;
  int lane;
  VehicleState state;
};

// Nearest first; equal gaps go to the lower id.
void sort_by_distance(std::vector<Candidate>& c) {
  std::sort(c.begin(), c.end(), [](const Candidate& p, const Candidate& q) {
    const double dp = std::abs(p.gap), dq = std::abs(q.gap);
    if (dp != dq) return dp < dq;
    return p.id < q.id;
  });
}

Neighbor real(const Candidate& c) { return Neighbor{c.state, c.id, c.lane, false}; }

}  // namespace

NeighborSet find_neighbors(const Track& central, std::span<const Track> all_tracks, std::size_t step,
                           const SceneGeometry& geometry) {
  if (step >= central.size()) throw ParameterError("central track has no sample at the requested step");
  const double t = central.time(step);
  const VehicleState& me = central.states[step];
  const int my_lane = central.lane_ids[step];
  const int adj_lane = adjacent_lane_of(my_lane, geometry);

  std::vector<Candidate> same_lead, same_follow, adj_lead, adj_follow;
  for (const auto& tr : all_tracks) {
    if (tr.vehicle_id == central.vehicle_id) continue;
    const long k = tr.index_at(t);
    if (k < 0) continue;
    const auto& s = tr.states[static_cast<std::size_t>(k)];
    const int lane = tr.lane_ids[static_cast<std::size_t>(k)];
    const double gap = s.x - me.x;
    Candidate c{gap, tr.vehicle_id, lane, s};
    if (lane == my_lane) {
      (gap >= 0.0 ? same_lead : same_follow).push_back(c);
    } else if (lane == adj_lane) {
      (gap >= 0.0 ? adj_lead : adj_follow).push_back(c);
    }
  }
  sort_by_distance(same_lead);
  sort_by_distance(same_follow);
  sort_by_distance(adj_lead);
  sort_by_distance(adj_follow);

  const bool on_ramp = my_lane != geometry.target_lane;
  NeighborSet out;
  for (auto role : kAllRoles) {
    Neighbor& n = out[role_index(role)];
    n.state = place_virtual_vehicle(role, geometry);
    if (!on_ramp) n.state.y = is_same_lane_role(role) ? geometry.y_tar : geometry.y_cur;
    n.lane_id = is_same_lane_role(role) ? my_lane : adj_lane;
  }
  auto assign = [&](NeighborRole role, const std::vector<Candidate>& pool, std::size_t rank) {
    if (pool.size() > rank) out[role_index(role)] = real(pool[rank]);
  };
  assign(NeighborRole::kLeader, same_lead, 0);
  assign(NeighborRole::kFollower, same_follow, 0);
  assign(NeighborRole::kNearestLeader, adj_lead, 0);
  assign(NeighborRole::kNearerLeader, adj_lead, 1);
  assign(NeighborRole::kNearestFollower, adj_follow, 0);
  assign(NeighborRole::kNearerFollower, adj_follow, 1);
  return out;
}

std::optional<double> detect_lane_change(const Track& central, const SceneGeometry& geometry) {
  for (std::size_t k = 0; k < central.lane_ids.size(); ++k) {
    if (central.lane_ids[k] != geometry.ramp_lane) return static_cast<double>(k) * central.dt;
  }
  return std::nullopt;
}

bool is_on_ramp_vehicle(const Track& track, const SceneGeometry& geometry) noexcept {
  return !track.lane_ids.empty() && track.lane_ids.front() == geometry.ramp_lane;
}

namespace {

Track slice(const Track& tr, std::size_t start, std::size_t length) {
  Track out;
  out.vehicle_id = tr.vehicle_id;
  out.dt = tr.dt;
  out.t0 = tr.time(start);
  const auto end = std::min(tr.size(), start + length);
  out.states.assign(tr.states.begin() + static_cast<long>(start), tr.states.begin() + static_cast<long>(end));
  out.lane_ids.assign(tr.lane_ids.begin() + static_cast<long>(start), tr.lane_ids.begin() + static_cast<long>(end));
  return out;
}

// Portion of `tr` that overlaps [t_begin, t_end].
Track slice_by_time(const Track& tr, double t_begin, double t_end) {
  const double eps = 0.25 * tr.dt;
  std::size_t first = tr.size(), last = 0;
  for (std::size_t k = 0; k < tr.size(); ++k) {
    const double t = tr.time(k);
    if (t >= t_begin - eps && t <= t_end + eps) {
      first = std::min(first, k);
      last = std::max(last, k);
    }
  }
  if (first == tr.size()) {
    Track empty;
    empty.vehicle_id = tr.vehicle_id;
    empty.dt = tr.dt;
    return empty;
  }
  return slice(tr, first, last - first + 1);
}

}  // namespace

Scene build_scene(const Track& central, const TrackIndex& index, std::size_t start, std::size_t length,
                  std::size_t anchor_step, const SceneGeometry& geometry, int scene_id) {
  if (start + length > central.size()) throw ParameterError("scene window runs past the central track");
  if (anchor_step >= length) throw ParameterError("anchor step lies outside the scene window");

  Scene sc;
  sc.scene_id = scene_id;
  sc.geometry = geometry;
  sc.central = slice(central, start, length);
  sc.anchor_step = anchor_step;
  sc.neighbors.reserve(length);
  for (std::size_t k = 0; k < length; ++k) {
    sc.neighbors.push_back(find_neighbors(central, index.tracks(), start + k, geometry));
  }
  if (auto lc = detect_lane_change(central, geometry)) {
    sc.lc_time = *lc - static_cast<double>(start) * central.dt;
  }
  const double t_begin = sc.central.t0;
  const double t_end = sc.central.end_time();
  for (auto role : kAllRoles) {
    const auto& n = sc.neighbors[anchor_step][role_index(role)];
    sc.anchor_ids[role_index(role)] = n.is_virtual ? -1 : n.vehicle_id;
    if (!n.is_virtual) {
      if (const Track* tr = index.find(n.vehicle_id)) {
        sc.anchor_tracks[role_index(role)] = slice_by_time(*tr, t_begin, t_end);
      }
    }
  }
  return sc;
}

SceneExtraction extract_scenes(std::span<const Track> tracks, const SceneGeometry& geometry, double window_len,
                               std::size_t samples_per_vehicle, std::uint64_t rng_seed) {
  geometry.validate();
  const auto length = static_cast<std::size_t>(std::lround(window_len / geometry.dt)) + 1;
  if (length <= kSceneAnchor) throw ParameterError("scene window must be longer than the 4 s input");
  const TrackIndex index(tracks);

  SceneExtraction out;
  int next_id = 0;
  for (const auto& tr : tracks) {
    if (!is_on_ramp_vehicle(tr, geometry)) continue;
    if (tr.size() < length) {
      ++out.skipped_short;
      continue;
    }
    const std::size_t n_starts = tr.size() - length + 1;
    std::vector<std::size_t> starts(n_starts);
    for (std::size_t i = 0; i < n_starts; ++i) starts[i] = i;
    Rng rng(derive_seed(rng_seed, "scenes", tr.vehicle_id));
    const std::size_t take = std::min(samples_per_vehicle, n_starts);
    // Partial Fisher-Yates: the first `take` entries are a uniform sample.
    for (std::size_t i = 0; i < take; ++i) {
      const auto j = i + rng.index(n_starts - i);
      std::swap(starts[i], starts[j]);
    }
    std::sort(starts.begin(), starts.begin() + static_cast<long>(take));
    for (std::size_t i = 0; i < take; ++i) {
      out.scenes.push_back(build_scene(tr, index, starts[i], length, kSceneAnchor, geometry, next_id++));
    }
  }
  return out;
}

std::vector<Scene> build_full_scenes(std::span<const Track> tracks, const SceneGeometry& geometry) {
  geometry.validate();
  const TrackIndex index(tracks);
  std::vector<Scene> out;
  int next_id = 0;
  for (const auto& tr : tracks) {
    if (!is_on_ramp_vehicle(tr, geometry)) continue;
    out.push_back(build_scene(tr, index, 0, tr.size(), tr.size() - 1, geometry, next_id++));
  }
  return out;
}

namespace {

json geometry_json(const SceneGeometry& g) {
  return json{{"x_end", g.x_end},         {"merge_start", g.merge_start},   {"y_cur", g.y_cur},
              {"y_tar", g.y_tar},         {"segment_length", g.segment_length}, {"v_max", g.v_max},
              {"dt", g.dt},               {"ramp_lane", g.ramp_lane},       {"target_lane", g.target_lane},
              {"influence_lo", g.influence_lo}, {"influence_hi", g.influence_hi}};
}

SceneGeometry geometry_from_json(const json& j) {
  SceneGeometry g;
  g.x_end = j.at("x_end").get<double>();
  g.merge_start = j.at("merge_start").get<double>();
  g.y_cur = j.at("y_cur").get<double>();
  g.y_tar = j.at("y_tar").get<double>();
  g.segment_length = j.at("segment_length").get<double>();
  g.v_max = j.at("v_max").get<double>();
  g.dt = j.at("dt").get<double>();
  g.ramp_lane = j.at("ramp_lane").get<int>();
  g.target_lane = j.at("target_lane").get<int>();
  g.influence_lo = j.at("influence_lo").get<double>();
  g.influence_hi = j.at("influence_hi").get<double>();
  return g;
}

}  // namespace

void write_scene_archive(std::ostream& out, std::span<const Scene> scenes) {
  for (const auto& sc : scenes) {
    json nb = json::object();
    for (auto role : kAllRoles) {
      const int id = sc.anchor_ids[role_index(role)];
      nb[std::string(role_name(role))] = id < 0 ? json("virtual") : json(id);
    }
    json j{{"scene_id", sc.scene_id},
           {"central_id", sc.central.vehicle_id},
           {"window_start", sc.window_start()},
           {"length", sc.central.size()},
           {"anchor_step", sc.anchor_step},
           {"neighbors", nb},
           {"lc_time", sc.lc_time ? json(*sc.lc_time) : json(nullptr)},
           {"geometry", geometry_json(sc.geometry)}};
    out << j.dump() << '\n';
  }
}

std::vector<SceneRecord> read_scene_archive(std::istream& in) {
  std::vector<SceneRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      SceneRecord r;
      r.scene_id = j.at("scene_id").get<int>();
      r.central_id = j.at("central_id").get<int>();
      r.window_start = j.at("window_start").get<double>();
      r.length = j.at("length").get<std::size_t>();
      r.anchor_step = j.at("anchor_step").get<std::size_t>();
      for (auto role : kAllRoles) {
        const auto& v = j.at("neighbors").at(std::string(role_name(role)));
        r.neighbor_ids[role_index(role)] = v.is_string() ? -1 : v.get<int>();
      }
      if (!j.at("lc_time").is_null()) r.lc_time = j.at("lc_time").get<double>();
      r.geometry = geometry_from_json(j.at("geometry"));
      out.push_back(r);
    } catch (const json::exception& ex) {
      throw ParseError(line_no, std::string("bad scene record: ") + ex.what());
    }
  }
  return out;
}

std::vector<Scene> restore_scenes(std::span<const SceneRecord> records, const TrackIndex& index) {
  std::vector<Scene> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const Track* tr = index.find(r.central_id);
    if (!tr) throw Error("scene " + std::to_string(r.scene_id) + ": central vehicle " + std::to_string(r.central_id) + " not found");
    const long start = tr->index_at(r.window_start);
    if (start < 0) throw Error("scene " + std::to_string(r.scene_id) + ": window start is off the central track");
    auto sc = build_scene(*tr, index, static_cast<std::size_t>(start), r.length, r.anchor_step, r.geometry, r.scene_id);
    if (sc.anchor_ids != r.neighbor_ids) {
      throw Error("scene " + std::to_string(r.scene_id) + ": neighbor roles differ from the archive");
    }
    out.push_back(std::move(sc));
  }
  return out;
}

}  // namespace mergecast
