#include "mergecast/rollout.hpp"

#include <algorithm>
#include <cmath>

#include "mergecast/error.hpp"

namespace mergecast::rollout {

std::size_t RolloutConfig::steps() const {
  validate();
  return static_cast<std::size_t>(std::lround(t_max / dt));
}

void RolloutConfig::validate() const {
  if (!(dt > 0.0)) throw ParameterError("rollout dt must be positive");
  const double ratio = t_max / dt;
  if (!(t_max >= 0.0) || std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio)) {
    throw ParameterError("rollout t_max must be a non-negative multiple of dt");
  }
  if (!(accel_max > 0.0)) throw ParameterError("rollout accel_max must be positive");
  if (!(decel_floor < 0.0)) throw ParameterError("rollout decel_floor must be negative");
  if (!(v_max > 0.0)) throw ParameterError("rollout v_max must be positive");
}

RolloutConfig make_rollout_config(const cf::CfParams& fitted, double t_max, double dt) {
  RolloutConfig cfg;
  cfg.dt = dt;
  cfg.t_max = t_max;
  cfg.params = fitted.params;
  if (const auto* idm = std::get_if<cf::IdmParams>(&fitted.params)) {
    cfg.accel_max = idm->a_max;
    cfg.decel_floor = -idm->b_max;
    cfg.v_max = idm->v_d;
  } else {
    cfg.accel_max = 5.0;
    cfg.decel_floor = -5.0;
    cfg.v_max = 35.0;
  }
  return cfg;
}

LeaderChoice select_nearest_adjacent_leader(double x_hat, std::span<const VehicleState, 4> adjacent) {
  LeaderChoice best;
  double best_gap = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double gap = adjacent[i].x - x_hat;
    if (!(gap >= 0.0)) continue;
    if (!best.role || gap < best_gap) {
      best.role = kAdjacentRoles[i];
      best.state = adjacent[i];
      best_gap = gap;
    }
  }
  if (!best.role) {
    best.state = VehicleState{};
    best.state.x = 500.0;
  }
  return best;
}

VehicleState actual_leader(const VehicleState& immediate_leader, const VehicleState& selected, double x_end) {
  if (immediate_leader.x >= x_end) return selected;
  VehicleState m;
  m.x = 0.5 * (immediate_leader.x + selected.x);
  m.v = 0.5 * (immediate_leader.v + selected.v);
  m.a = 0.5 * (immediate_leader.a + selected.a);
  return m;
}

StepResult step(const Kin& state, const VehicleState& leader, const RolloutConfig& cfg) {
  StepResult r;
  VehicleState self;
  self.x = state.x;
  self.v = state.v;
  self.a = state.a;
  const auto out = cf::accel(self, leader, cfg.params);
  double a = out.value;
  if (out.saturated) r.flags |= kGapSaturated;
  if (!std::isfinite(a)) {
    a = cfg.decel_floor;
    r.flags |= kNonFinite;
  }
  if (a > cfg.accel_max) {
    a = cfg.accel_max;
    r.flags |= kAccelUpper;
  } else if (a < cfg.decel_floor) {
    a = cfg.decel_floor;
    r.flags |= kAccelLower;
  }
  double v = state.v + a * cfg.dt;
  if (v > cfg.v_max) {
    v = cfg.v_max;
    r.flags |= kSpeedUpper;
  } else if (v < 0.0) {
    v = 0.0;
    r.flags |= kSpeedLower;
  }
  r.next = Kin{state.x + v * cfg.dt, v, a};
  return r;
}

ForecastResult forecast(const Kin& initial, const NeighborForecast& neighbors, const RolloutConfig& cfg, double x_end) {
  const std::size_t n = cfg.steps();
  for (const auto& s : neighbors.states) {
    if (s.size() < n) throw ParameterError("neighbor predictions do not cover the forecast horizon");
  }
  ForecastResult res;
  res.initial = initial;
  res.steps.reserve(n);
  Kin cur = initial;
  for (std::size_t k = 0; k < n; ++k) {
    std::array<VehicleState, 4> adj;
    for (std::size_t i = 0; i < 4; ++i) adj[i] = neighbors.states[role_index(kAdjacentRoles[i])][k];
    const auto choice = select_nearest_adjacent_leader(cur.x, adj);
    const auto& immediate = neighbors.states[role_index(NeighborRole::kLeader)][k];
    const auto leader = actual_leader(immediate, choice.state, x_end);
    const auto st = step(cur, leader, cfg);

    ForecastStep fs;
    fs.t = static_cast<double>(k + 1) * cfg.dt;
    fs.state = st.next;
    fs.leader_role = choice.role;
    fs.immediate_leader_past_end = immediate.x >= x_end;
    fs.leader = leader;
    fs.flags = st.flags;
    res.steps.push_back(fs);
    cur = st.next;
  }
  return res;
}

ForecastResult forecast(const Scene& scene, const NeighborForecast& neighbors, const RolloutConfig& cfg) {
  if (scene.anchor_step >= scene.central.size()) throw ParameterError("scene anchor outside the central track");
  const auto& s = scene.central.states[scene.anchor_step];
  return forecast(Kin{s.x, s.v, s.a}, neighbors, cfg, scene.geometry.x_end);
}

}  // namespace mergecast::rollout
