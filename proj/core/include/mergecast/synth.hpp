#pragma once

// Synthetic merge traffic: a longitudinal multi-vehicle simulation on the
// on-ramp / adjacent-lane layout driven by the car-following models.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mergecast/cf.hpp"
#include "mergecast/scene.hpp"
#include "mergecast/types.hpp"

namespace mergecast::synth {

struct SyntheticVehicle {
  int id = 0;
  int lane = 0;
  double entry_time = 0.0;
  double entry_x = 0.0;
  double entry_speed = 0.0;
  cf::ModelParams params;
  std::optional<double> lc_time;  ///< absolute time of the scripted lane change
};

struct SyntheticScenario {
  SceneGeometry geometry;
  double dt = 0.1;
  double duration = 120.0;
  std::vector<SyntheticVehicle> vehicles;
  double position_noise = 0.0;  ///< std. dev. of additive noise on x and y (m)
  std::uint64_t seed = 1;
  /// Ramp vehicles drift linearly from their lane center toward the lane
  /// boundary over this many seconds before the lane change, then on to the
  /// target lane center over the same time after it. 0 jumps instantly.
  double lateral_lead = 8.0;
  double accel_limit = 10.0;
  double decel_limit = 9.0;

  void validate() const;
};

/// Simulates the scenario on its dt grid and returns one track per vehicle
/// that entered the road (canonical layout, sorted by id). Throws
/// ScenarioError on any gap <= 0 between consecutive vehicles in one lane.
std::vector<Track> generate_synthetic_corpus(const SyntheticScenario& scenario);

/// Parameters of a randomly populated merge scenario.
struct MergeTrafficConfig {
  SceneGeometry geometry;
  double dt = 0.1;
  double duration = 240.0;
  double ramp_headway = 8.0;      ///< mean seconds between on-ramp entries
  double adjacent_headway = 3.5;  ///< mean seconds between adjacent-lane entries
  double ramp_speed_lo = 14.0, ramp_speed_hi = 20.0;
  double adjacent_speed_lo = 20.0, adjacent_speed_hi = 26.0;
  double merge_x_lo = 120.0, merge_x_hi = 210.0;
  double lateral_lead = 8.0;
  double position_noise = 0.0;
  int first_id = 1;
  std::uint64_t seed = 1;
};

/// Draws vehicles and IDM parameters from the config, then scripts each
/// on-ramp vehicle's lane change at the first step past its target position
/// where the adjacent lane offers an acceptable gap.
SyntheticScenario make_merge_scenario(const MergeTrafficConfig& cfg);

}  // namespace mergecast::synth
