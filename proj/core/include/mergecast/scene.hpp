#pragma once

// Neighbor resolution around an on-ramp ("central") vehicle and extraction of
// fixed-length scenes for forecasting.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mergecast/types.hpp"

namespace mergecast {

/// Road geometry of the merge segment. Defaults follow the I-80 study area.
struct SceneGeometry {
  double x_end = 230.0;           ///< end of the on-ramp
  double merge_start = 170.0;     ///< start of the merge zone
  double y_cur = 0.0;             ///< on-ramp lane center
  double y_tar = 3.7;             ///< target (adjacent) lane center
  double segment_length = 503.0;
  double v_max = 35.0;
  double dt = kTrackDt;
  int ramp_lane = 7;
  int target_lane = 6;
  double influence_lo = 100.0;    ///< ramp influence area, longitudinal
  double influence_hi = 330.0;

  /// Throws ParameterError when the geometry is inconsistent.
  void validate() const;
};

/// Neighbor roles, in feature-vector order.
enum class NeighborRole : std::uint8_t {
  kLeader = 0,         ///< l: immediate leader, same lane
  kNearestLeader,      ///< l1: first leader in the adjacent lane
  kNearerLeader,       ///< l2: second leader in the adjacent lane
  kFollower,           ///< f: immediate follower, same lane
  kNearestFollower,    ///< f1
  kNearerFollower,     ///< f2
};

inline constexpr std::size_t kNumRoles = 6;
inline constexpr std::array<NeighborRole, kNumRoles> kAllRoles{
    NeighborRole::kLeader,   NeighborRole::kNearestLeader,   NeighborRole::kNearerLeader,
    NeighborRole::kFollower, NeighborRole::kNearestFollower, NeighborRole::kNearerFollower};
/// Adjacent-lane roles in leader-selection tie order.
inline constexpr std::array<NeighborRole, 4> kAdjacentRoles{
    NeighborRole::kNearestLeader, NeighborRole::kNearerLeader, NeighborRole::kNearestFollower,
    NeighborRole::kNearerFollower};

constexpr std::size_t role_index(NeighborRole r) noexcept { return static_cast<std::size_t>(r); }
constexpr bool is_leader_role(NeighborRole r) noexcept {
  return r == NeighborRole::kLeader || r == NeighborRole::kNearestLeader || r == NeighborRole::kNearerLeader;
}
constexpr bool is_same_lane_role(NeighborRole r) noexcept {
  return r == NeighborRole::kLeader || r == NeighborRole::kFollower;
}
std::string_view role_name(NeighborRole r) noexcept;  ///< "l", "l1", ...
std::optional<NeighborRole> role_from_name(std::string_view name) noexcept;

struct Neighbor {
  VehicleState state;
  int vehicle_id = -1;  ///< -1 for virtual vehicles
  int lane_id = 0;
  bool is_virtual = true;
};

using NeighborSet = std::array<Neighbor, kNumRoles>;

/// Lookup of tracks by vehicle id.
class TrackIndex {
 public:
  explicit TrackIndex(std::span<const Track> tracks);
  std::span<const Track> tracks() const noexcept { return tracks_; }
  const Track* find(int vehicle_id) const noexcept;

 private:
  std::span<const Track> tracks_;
  std::unordered_map<int, std::size_t> by_id_;
};

/// Placeholder for a missing neighbor: the immediate leader sits at the ramp
/// end, other leaders at +500 m, followers at -500 m; all at rest.
VehicleState place_virtual_vehicle(NeighborRole role, const SceneGeometry& geometry);

/// Lane the central vehicle would merge into when it is in `central_lane`.
int adjacent_lane_of(int central_lane, const SceneGeometry& geometry) noexcept;

/// Resolves the six neighbor roles of `central` at `step`. Leaders satisfy
/// x_n >= x_i, followers x_n < x_i; equal gaps go to the lower vehicle id.
/// Missing roles are filled with virtual vehicles.
NeighborSet find_neighbors(const Track& central, std::span<const Track> all_tracks, std::size_t step,
                           const SceneGeometry& geometry);

/// Time (relative to the track start) of the first sample whose lane is not
/// the on-ramp lane.
std::optional<double> detect_lane_change(const Track& central, const SceneGeometry& geometry);

/// A central vehicle's window with per-step neighbor resolution.
struct Scene {
  int scene_id = 0;
  Track central;                          ///< window slice, starts at t = window_start
  std::vector<NeighborSet> neighbors;     ///< one per central sample
  std::size_t anchor_step = 0;            ///< last sample of the observed input
  std::array<int, kNumRoles> anchor_ids{};  ///< neighbor ids at the anchor, -1 virtual
  std::array<Track, kNumRoles> anchor_tracks;  ///< window slice of each anchor neighbor; empty if virtual
  SceneGeometry geometry;
  std::optional<double> lc_time;          ///< relative to the window start

  double window_start() const noexcept { return central.t0; }
};

/// Samples of a 19 s scene: 4 s input ending at the anchor, 15 s forecast.
inline constexpr std::size_t kInputSteps = 20;
inline constexpr std::size_t kHorizonSteps = 75;
inline constexpr std::size_t kSceneAnchor = kInputSteps;
inline constexpr std::size_t kSceneSamples = kInputSteps + kHorizonSteps + 1;

/// Builds a scene from central[start, start + length), resolving neighbors at
/// every step and anchoring roles at `anchor_step` (relative to start).
Scene build_scene(const Track& central, const TrackIndex& index, std::size_t start, std::size_t length,
                  std::size_t anchor_step, const SceneGeometry& geometry, int scene_id = 0);

struct SceneExtraction {
  std::vector<Scene> scenes;
  std::size_t skipped_short = 0;  ///< on-ramp vehicles too short for one window
};

/// Draws up to `samples_per_vehicle` distinct window starts per on-ramp
/// vehicle. Each vehicle's draw uses a seed derived from (rng_seed, id).
SceneExtraction extract_scenes(std::span<const Track> tracks, const SceneGeometry& geometry,
                               double window_len, std::size_t samples_per_vehicle, std::uint64_t rng_seed);

/// True when the track starts in the on-ramp lane.
bool is_on_ramp_vehicle(const Track& track, const SceneGeometry& geometry) noexcept;

/// One scene per on-ramp vehicle covering its whole track; used to draw
/// classification anchors.
std::vector<Scene> build_full_scenes(std::span<const Track> tracks, const SceneGeometry& geometry);

/// Scene archive: one JSON object per line.
void write_scene_archive(std::ostream& out, std::span<const Scene> scenes);

struct SceneRecord {
  int scene_id = 0;
  int central_id = 0;
  double window_start = 0.0;
  std::size_t length = 0;
  std::size_t anchor_step = 0;
  std::array<int, kNumRoles> neighbor_ids{};
  std::optional<double> lc_time;
  SceneGeometry geometry;
};
std::vector<SceneRecord> read_scene_archive(std::istream& in);

/// Rebuilds full scenes from archive records and the tracks they came from.
std::vector<Scene> restore_scenes(std::span<const SceneRecord> records, const TrackIndex& index);

}  // namespace mergecast
