#include "mergecast/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "mergecast/error.hpp"
#include "mergecast/rng.hpp"

namespace mergecast::synth {

void SyntheticScenario::validate() const {
  geometry.validate();
  if (!(dt > 0.0)) throw ParameterError("scenario dt must be positive");
  if (!(duration > 0.0)) throw ParameterError("scenario duration must be positive");
  if (!(position_noise >= 0.0)) throw ParameterError("position noise must be non-negative");
  if (!(lateral_lead >= 0.0)) throw ParameterError("lateral lead must be non-negative");
  if (!(accel_limit > 0.0) || !(decel_limit > 0.0)) throw ParameterError("acceleration limits must be positive");
  std::set<int> ids;
  for (const auto& v : vehicles) {
    if (!ids.insert(v.id).second) throw ParameterError("duplicate vehicle id " + std::to_string(v.id));
    if (v.lane != geometry.ramp_lane && v.lane != geometry.target_lane) {
      throw ParameterError("vehicle " + std::to_string(v.id) + " is on an unknown lane");
    }
    if (v.lc_time && v.lane != geometry.ramp_lane) {
      throw ParameterError("vehicle " + std::to_string(v.id) + " has a lane change but does not start on the ramp");
    }
    if (!(v.entry_speed >= 0.0) || !(v.entry_time >= 0.0)) {
      throw ParameterError("vehicle " + std::to_string(v.id) + " has a negative entry time or speed");
    }
  }
}

namespace {

struct Agent {
  const SyntheticVehicle* spec = nullptr;
  bool active = false;
  bool done = false;
  double x = 0.0, v = 0.0, a = 0.0;
  int lane = 0;
  std::size_t entry_step = 0;
  std::optional<double> lc_time;
  std::vector<VehicleState> states;
  std::vector<int> lanes;
};

/// Lane-change trigger used while populating a scenario: the first step at
/// or past the target position with acceptable gaps in the target lane.
struct GapAcceptance {
  std::vector<double> target_x;  ///< per agent, NaN when the agent never merges
};

const Agent* nearest(const std::vector<Agent>& agents, std::size_t self, int lane, bool ahead) {
  const Agent* best = nullptr;
  const double x0 = agents[self].x;
  for (std::size_t j = 0; j < agents.size(); ++j) {
    const auto& o = agents[j];
    if (j == self || !o.active || o.lane != lane) continue;
    if (ahead ? o.x < x0 : o.x >= x0) continue;
    if (!best || (ahead ? o.x < best->x : o.x > best->x)) best = &o;
  }
  return best;
}

bool gaps_acceptable(const std::vector<Agent>& agents, std::size_t i, int lane) {
  const auto& me = agents[i];
  if (const auto* lead = nearest(agents, i, lane, true)) {
    if (lead->x - me.x < 5.0 + 1.5 * std::max(0.0, me.v - lead->v)) return false;
  }
  if (const auto* lag = nearest(agents, i, lane, false)) {
    if (me.x - lag->x < 10.0 + 2.0 * std::max(0.0, lag->v - me.v)) return false;
  }
  return true;
}

void check_collisions(const std::vector<Agent>& agents, double t) {
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (!agents[i].active) continue;
    const auto* lead = nearest(agents, i, agents[i].lane, true);
    if (lead && lead->x - agents[i].x <= 0.0) {
      std::ostringstream msg;
      msg << "collision in lane " << agents[i].lane << " at t=" << t << ": vehicle " << agents[i].spec->id
          << " (x=" << agents[i].x << ") and vehicle " << lead->spec->id << " (x=" << lead->x << ")";
      throw ScenarioError(msg.str());
    }
  }
}

VehicleState leader_of(const std::vector<Agent>& agents, std::size_t i, const SceneGeometry& g) {
  const auto& me = agents[i];
  VehicleState leader;
  const auto* lead = nearest(agents, i, me.lane, true);
  const bool wall = me.lane == g.ramp_lane && me.x > g.merge_start && (!lead || lead->x > g.x_end);
  if (wall) {
    leader.x = g.x_end;
  } else if (lead) {
    leader.x = lead->x;
    leader.v = lead->v;
    leader.a = lead->a;
  } else {
    leader.x = me.x + 1000.0;
    leader.v = me.v;
  }
  return leader;
}

void simulate(const SyntheticScenario& sc, std::vector<Agent>& agents, const GapAcceptance* policy) {
  const auto& g = sc.geometry;
  const auto n_steps = static_cast<std::size_t>(std::llround(sc.duration / sc.dt));
  std::vector<double> acc(agents.size(), 0.0);

  for (std::size_t k = 0; k <= n_steps; ++k) {
    const double t = static_cast<double>(k) * sc.dt;

    for (std::size_t i = 0; i < agents.size(); ++i) {
      auto& ag = agents[i];
      if (ag.active || ag.done || ag.spec->entry_time > t + 1e-9) continue;
      // Enter only with room ahead; otherwise wait for the next step.
      ag.x = ag.spec->entry_x;
      const auto* lead = nearest(agents, i, ag.lane, true);
      if (lead && lead->x - ag.x <= 5.0 + ag.spec->entry_speed) continue;
      ag.active = true;
      ag.v = ag.spec->entry_speed;
      ag.entry_step = k;
    }

    for (std::size_t i = 0; i < agents.size(); ++i) {
      auto& ag = agents[i];
      if (!ag.active || ag.lane != g.ramp_lane) continue;
      bool change = false;
      if (policy) {
        const double target = policy->target_x[i];
        change = !std::isnan(target) && ag.x >= target && gaps_acceptable(agents, i, g.target_lane);
        if (change) ag.lc_time = t;
      } else if (ag.lc_time) {
        change = static_cast<std::size_t>(std::llround(*ag.lc_time / sc.dt)) == k;
      }
      if (change) ag.lane = g.target_lane;
    }

    check_collisions(agents, t);

    for (std::size_t i = 0; i < agents.size(); ++i) {
      if (!agents[i].active) continue;
      VehicleState self;
      self.x = agents[i].x;
      self.v = agents[i].v;
      double a = cf::accel(self, leader_of(agents, i, g), agents[i].spec->params).value;
      if (!std::isfinite(a)) a = -sc.decel_limit;
      acc[i] = std::clamp(a, -sc.decel_limit, sc.accel_limit);
    }

    for (std::size_t i = 0; i < agents.size(); ++i) {
      auto& ag = agents[i];
      if (!ag.active) continue;
      ag.a = acc[i];
      VehicleState s;
      s.x = ag.x;
      s.v = ag.v;
      s.a = ag.a;
      ag.states.push_back(s);
      ag.lanes.push_back(ag.lane);
    }

    for (auto& ag : agents) {
      if (!ag.active) continue;
      ag.v = std::max(0.0, ag.v + ag.a * sc.dt);
      ag.x += ag.v * sc.dt;
      if (ag.x > g.segment_length) {
        ag.active = false;
        ag.done = true;
      }
    }
  }
}

std::vector<Agent> make_agents(const SyntheticScenario& sc) {
  std::vector<Agent> agents(sc.vehicles.size());
  for (std::size_t i = 0; i < agents.size(); ++i) {
    agents[i].spec = &sc.vehicles[i];
    agents[i].lane = sc.vehicles[i].lane;
    agents[i].lc_time = sc.vehicles[i].lc_time;
  }
  return agents;
}

void apply_lateral(const SyntheticScenario& sc, const Agent& ag, Track& track) {
  const auto& g = sc.geometry;
  const double y0 = ag.spec->lane == g.ramp_lane ? g.y_cur : g.y_tar;
  const double span = g.y_tar - g.y_cur;
  const double lead = sc.lateral_lead;
  for (std::size_t k = 0; k < track.states.size(); ++k) {
    auto& s = track.states[k];
    s.y = y0;
    s.u = 0.0;
    s.e = 0.0;
    if (!ag.lc_time) continue;
    const double t = track.time(k);
    const double T = *ag.lc_time;
    if (lead == 0.0) {
      if (t >= T - 1e-9) s.y = g.y_tar;
      continue;
    }
    const double frac = std::clamp((t - (T - lead)) / (2.0 * lead), 0.0, 1.0);
    s.y = g.y_cur + span * frac;
    if (frac > 0.0 && frac < 1.0) s.u = span / (2.0 * lead);
  }
}

}  // namespace

std::vector<Track> generate_synthetic_corpus(const SyntheticScenario& scenario) {
  scenario.validate();
  auto agents = make_agents(scenario);
  simulate(scenario, agents, nullptr);

  std::vector<Track> out;
  for (const auto& ag : agents) {
    if (ag.states.empty()) continue;
    Track tr;
    tr.vehicle_id = ag.spec->id;
    tr.dt = scenario.dt;
    tr.t0 = static_cast<double>(ag.entry_step) * scenario.dt;
    tr.states = ag.states;
    tr.lane_ids = ag.lanes;
    apply_lateral(scenario, ag, tr);
    if (scenario.position_noise > 0.0) {
      Rng rng(derive_seed(scenario.seed, "position-noise", ag.spec->id));
      for (auto& s : tr.states) {
        s.x += scenario.position_noise * rng.normal();
        s.y += scenario.position_noise * rng.normal();
      }
    }
    out.push_back(std::move(tr));
  }
  std::sort(out.begin(), out.end(), [](const Track& a, const Track& b) { return a.vehicle_id < b.vehicle_id; });
  return out;
}

SyntheticScenario make_merge_scenario(const MergeTrafficConfig& cfg) {
  if (!(cfg.ramp_headway > 0.0) || !(cfg.adjacent_headway > 0.0)) {
    throw ParameterError("headways must be positive");
  }
  Rng rng(derive_seed(cfg.seed, "merge-scenario"));
  SyntheticScenario sc;
  sc.geometry = cfg.geometry;
  sc.dt = cfg.dt;
  sc.duration = cfg.duration;
  sc.position_noise = cfg.position_noise;
  sc.lateral_lead = cfg.lateral_lead;
  sc.seed = cfg.seed;

  struct Entry {
    double time;
    int lane;
  };
  std::vector<Entry> entries;
  auto arrivals = [&](double headway, int lane) {
    double t = rng.uniform(0.0, headway);
    while (t < cfg.duration) {
      entries.push_back({t, lane});
      t += rng.uniform(0.5 * headway, 1.5 * headway);
    }
  };
  arrivals(cfg.ramp_headway, cfg.geometry.ramp_lane);
  arrivals(cfg.adjacent_headway, cfg.geometry.target_lane);
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.time < b.time; });

  GapAcceptance policy;
  int id = cfg.first_id;
  for (const auto& e : entries) {
    const bool ramp = e.lane == cfg.geometry.ramp_lane;
    SyntheticVehicle v;
    v.id = id++;
    v.lane = e.lane;
    v.entry_time = e.time;
    v.entry_speed = ramp ? rng.uniform(cfg.ramp_speed_lo, cfg.ramp_speed_hi)
                         : rng.uniform(cfg.adjacent_speed_lo, cfg.adjacent_speed_hi);
    cf::IdmParams p;
    p.s0 = rng.uniform(5.0, 7.0);
    p.h_d = rng.uniform(1.0, 1.6);
    p.a_max = rng.uniform(1.0, 2.0);
    p.b_max = rng.uniform(1.5, 2.5);
    p.v_d = ramp ? rng.uniform(24.0, 30.0) : rng.uniform(26.0, 32.0);
    p.delta = 4.0;
    v.params = p;
    policy.target_x.push_back(ramp ? rng.uniform(cfg.merge_x_lo, cfg.merge_x_hi)
                                   : std::numeric_limits<double>::quiet_NaN());
    sc.vehicles.push_back(v);
  }
  sc.validate();

  auto agents = make_agents(sc);
  simulate(sc, agents, &policy);
  for (std::size_t i = 0; i < agents.size(); ++i) sc.vehicles[i].lc_time = agents[i].lc_time;
  return sc;
}

}  // namespace mergecast::synth
