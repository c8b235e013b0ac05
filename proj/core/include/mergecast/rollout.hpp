#pragma once

// Forecast of the central vehicle's longitudinal motion: the fitted
// car-following law is stepped forward against an "actual leader" built from
// the predicted immediate leader and the nearest predicted adjacent-lane
// leader, with acceleration and speed clamps.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mergecast/cf.hpp"
#include "mergecast/scene.hpp"
#include "mergecast/types.hpp"

namespace mergecast::rollout {

struct RolloutConfig {
  double dt = kTrackDt;
  double t_max = 15.0;
  double v_max = 35.0;
  double accel_max = 5.0;    ///< A_i, positive
  double decel_floor = -5.0; ///< B_i, stored as a negative floor
  cf::ModelParams params = cf::IdmParams{};

  std::size_t steps() const;
  void validate() const;
};

/// Clamp bounds and speed limit for a fitted model: IDM reuses its own
/// a_max, b_max and v_d; Gipps and GHR get +-5 m/s^2 and 35 m/s.
RolloutConfig make_rollout_config(const cf::CfParams& fitted, double t_max = 15.0, double dt = kTrackDt);

/// Longitudinal state of the forecast vehicle.
struct Kin {
  double x = 0.0;
  double v = 0.0;
  double a = 0.0;
};

enum ClampFlag : std::uint8_t {
  kNone = 0,
  kAccelUpper = 1 << 0,
  kAccelLower = 1 << 1,
  kSpeedUpper = 1 << 2,
  kSpeedLower = 1 << 3,
  kNonFinite = 1 << 4,   ///< model output was not finite; B_i used
  kGapSaturated = 1 << 5,
};

struct LeaderChoice {
  std::optional<NeighborRole> role;  ///< empty: virtual leader at +500 m
  VehicleState state;
};

/// Adjacent-lane vehicle with the smallest non-negative gap ahead of x_hat;
/// ties resolve in l1, l2, f1, f2 order. `adjacent` is indexed like
/// kAdjacentRoles.
LeaderChoice select_nearest_adjacent_leader(double x_hat, std::span<const VehicleState, 4> adjacent);

/// The selected adjacent leader when the immediate leader has reached the
/// ramp end, otherwise the mean of both over (x, v, a).
VehicleState actual_leader(const VehicleState& immediate_leader, const VehicleState& selected, double x_end);

struct StepResult {
  Kin next;
  std::uint8_t flags = kNone;
};

/// One forecast step: clamp the model acceleration to [B_i, A_i], update
/// speed and clamp it to [0, v_max], then advance position with the new speed.
StepResult step(const Kin& state, const VehicleState& leader, const RolloutConfig& cfg);

/// Predicted states of every neighbor role over the forecast. Entry 0 is the
/// observed state at the anchor, entry k the prediction k steps later.
struct NeighborForecast {
  std::array<std::vector<VehicleState>, kNumRoles> states;

  std::size_t steps() const noexcept { return states[0].empty() ? 0 : states[0].size() - 1; }
};

struct ForecastStep {
  double t = 0.0;  ///< seconds after the anchor
  Kin state;
  std::optional<NeighborRole> leader_role;
  bool immediate_leader_past_end = false;
  VehicleState leader;
  std::uint8_t flags = kNone;
};

struct ForecastResult {
  Kin initial;
  std::vector<ForecastStep> steps;
};

/// Steps the central vehicle from its anchor state for cfg.steps() steps.
ForecastResult forecast(const Kin& initial, const NeighborForecast& neighbors, const RolloutConfig& cfg,
                        double x_end);
ForecastResult forecast(const Scene& scene, const NeighborForecast& neighbors, const RolloutConfig& cfg);

}  // namespace mergecast::rollout
