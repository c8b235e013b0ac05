#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "mergecast/error.hpp"
#include "mergecast/rollout.hpp"
#include "oracles.hpp"

using namespace mergecast;
using namespace mergecast::rollout;

namespace {

VehicleState vs(double x, double v, double a = 0.0) {
  VehicleState s;
  s.x = x;
  s.v = v;
  s.a = a;
  return s;
}

// Every role parked far behind, except those overwritten by the caller.
NeighborForecast parked(std::size_t steps) {
  NeighborForecast nf;
  for (auto& s : nf.states) s.assign(steps + 1, vs(-500, 0));
  return nf;
}

RolloutConfig ghr_config(double t_max) {
  RolloutConfig cfg;
  cfg.t_max = t_max;
  cfg.params = cf::GhrParams{2, 0, 1};
  return cfg;
}

}  // namespace

TEST(Step, ThreeStepHandTrace) {
  // Immediate leader already past the ramp end, so l1 alone leads.
  auto nf = parked(3);
  for (std::size_t k = 0; k <= 3; ++k) {
    nf.states[role_index(NeighborRole::kLeader)][k] = vs(300, 0);
    nf.states[role_index(NeighborRole::kNearestLeader)][k] = vs(30 + 12 * 0.2 * static_cast<double>(k), 12);
  }
  const auto res = forecast(Kin{0, 10, 0}, nf, ghr_config(0.6), 230);
  ASSERT_EQ(res.steps.size(), 3u);

  // step 1: a = 2 * 2 / 30
  const double a1 = 2.0 * 2.0 / 30.0, v1 = 10 + 0.2 * a1, x1 = 0.2 * v1;
  // step 2: leader at 32.4
  const double a2 = 2.0 * (12 - v1) / (32.4 - x1), v2 = v1 + 0.2 * a2, x2 = x1 + 0.2 * v2;
  const double a3 = 2.0 * (12 - v2) / (34.8 - x2), v3 = v2 + 0.2 * a3, x3 = x2 + 0.2 * v3;
  const double want[3][3] = {{x1, v1, a1}, {x2, v2, a2}, {x3, v3, a3}};
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(res.steps[k].state.x, want[k][0], 1e-12);
    EXPECT_NEAR(res.steps[k].state.v, want[k][1], 1e-12);
    EXPECT_NEAR(res.steps[k].state.a, want[k][2], 1e-12);
    EXPECT_NEAR(res.steps[k].t, 0.2 * static_cast<double>(k + 1), 1e-12);
    EXPECT_EQ(res.steps[k].leader_role, NeighborRole::kNearestLeader);
    EXPECT_TRUE(res.steps[k].immediate_leader_past_end);
    EXPECT_EQ(res.steps[k].flags, kNone);
  }
  EXPECT_NEAR(a1, 0.13333333333333333, 1e-15);
  EXPECT_NEAR(x1, 2.0053333333333333, 1e-12);
}

TEST(Step, AveragesLeadersBeforeTheRampEnd) {
  auto nf = parked(1);
  nf.states[role_index(NeighborRole::kLeader)][0] = vs(40, 8, 1);
  nf.states[role_index(NeighborRole::kNearestLeader)][0] = vs(60, 14, -1);
  const auto res = forecast(Kin{0, 10, 0}, nf, ghr_config(0.2), 230);
  const auto& l = res.steps[0].leader;
  EXPECT_DOUBLE_EQ(l.x, 50);
  EXPECT_DOUBLE_EQ(l.v, 11);
  EXPECT_DOUBLE_EQ(l.a, 0);
  EXPECT_FALSE(res.steps[0].immediate_leader_past_end);
  EXPECT_NEAR(res.steps[0].state.a, oracle::ghr(0, 10, 50, 11, 2, 0, 1), 1e-14);
}

TEST(Step, AccelerationClampsAtBothBounds) {
  RolloutConfig cfg = ghr_config(0.2);
  cfg.params = cf::GhrParams{10, 0, 0};
  auto up = step(Kin{0, 10, 0}, vs(50, 20), cfg);
  EXPECT_DOUBLE_EQ(up.next.a, cfg.accel_max);
  EXPECT_TRUE(up.flags & kAccelUpper);
  auto dn = step(Kin{0, 20, 0}, vs(50, 10), cfg);
  EXPECT_DOUBLE_EQ(dn.next.a, cfg.decel_floor);
  EXPECT_TRUE(dn.flags & kAccelLower);
  EXPECT_DOUBLE_EQ(dn.next.v, 20 - 5 * 0.2);
  EXPECT_DOUBLE_EQ(dn.next.x, 0.2 * 19);
}

TEST(Step, SpeedClampsAtBothBounds) {
  RolloutConfig cfg = ghr_config(0.2);
  cfg.params = cf::GhrParams{10, 0, 0};
  const auto fast = step(Kin{0, 34.5, 0}, vs(50, 40), cfg);
  EXPECT_DOUBLE_EQ(fast.next.v, cfg.v_max);
  EXPECT_TRUE(fast.flags & kSpeedUpper);
  const auto slow = step(Kin{0, 0.3, 0}, vs(50, 0), cfg);
  EXPECT_DOUBLE_EQ(slow.next.v, 0.0);
  EXPECT_DOUBLE_EQ(slow.next.x, 0.0);
  EXPECT_TRUE(slow.flags & kSpeedLower);
}

TEST(Step, NonFiniteOutputFallsBackToFloor) {
  RolloutConfig cfg = ghr_config(0.2);
  // gap^gamma underflows to zero, so the quotient is infinite.
  cfg.params = cf::GhrParams{1, 0, 400};
  const auto r = step(Kin{0, 5, 0}, vs(0.12, 6), cfg);
  EXPECT_TRUE(r.flags & kNonFinite);
  EXPECT_DOUBLE_EQ(r.next.a, cfg.decel_floor);
}

TEST(Step, ContactSaturatesBraking) {
  const auto r = step(Kin{10, 5, 0}, vs(10, 5), ghr_config(0.2));
  EXPECT_TRUE(r.flags & kGapSaturated);
  EXPECT_DOUBLE_EQ(r.next.a, -5.0);
}

TEST(Leader, NearestNonNegativeGapWithTieOrder) {
  std::array<VehicleState, 4> adj{vs(120, 0), vs(110, 0), vs(90, 0), vs(110, 0)};
  auto c = select_nearest_adjacent_leader(100, adj);
  EXPECT_EQ(c.role, NeighborRole::kNearerLeader);
  EXPECT_DOUBLE_EQ(c.state.x, 110);

  adj = {vs(100, 3), vs(100, 4), vs(80, 0), vs(70, 0)};
  c = select_nearest_adjacent_leader(100, adj);
  EXPECT_EQ(c.role, NeighborRole::kNearestLeader);

  adj = {vs(50, 0), vs(60, 0), vs(40, 0), vs(30, 0)};
  c = select_nearest_adjacent_leader(100, adj);
  EXPECT_FALSE(c.role.has_value());
  EXPECT_DOUBLE_EQ(c.state.x, 500);
  EXPECT_DOUBLE_EQ(c.state.v, 0);

  // A follower that overtook the forecast position becomes a candidate.
  adj = {vs(150, 0), vs(170, 0), vs(105, 0), vs(30, 0)};
  c = select_nearest_adjacent_leader(100, adj);
  EXPECT_EQ(c.role, NeighborRole::kNearestFollower);
}

TEST(Leader, ActualLeaderRule) {
  const auto sel = vs(200, 20, 0.5);
  const auto past = actual_leader(vs(230, 0), sel, 230);
  EXPECT_DOUBLE_EQ(past.x, 200);
  EXPECT_DOUBLE_EQ(past.a, 0.5);
  const auto mean = actual_leader(vs(100, 10, -1), sel, 230);
  EXPECT_DOUBLE_EQ(mean.x, 150);
  EXPECT_DOUBLE_EQ(mean.v, 15);
  EXPECT_DOUBLE_EQ(mean.a, -0.25);
}

TEST(Forecast, DeterministicAndLengthMatchesHorizon) {
  auto nf = parked(75);
  for (std::size_t k = 0; k <= 75; ++k) {
    nf.states[role_index(NeighborRole::kLeader)][k] = vs(60 + 5 * 0.2 * static_cast<double>(k), 5);
    nf.states[role_index(NeighborRole::kNearestLeader)][k] = vs(80 + 20 * 0.2 * static_cast<double>(k), 20);
  }
  RolloutConfig cfg;
  cfg.params = cf::IdmParams{6, 1.2, 1.5, 2.0, 28, 4};
  const auto a = forecast(Kin{10, 12, 0}, nf, cfg, 230);
  const auto b = forecast(Kin{10, 12, 0}, nf, cfg, 230);
  ASSERT_EQ(a.steps.size(), 75u);
  for (std::size_t k = 0; k < 75; ++k) {
    EXPECT_EQ(a.steps[k].state.x, b.steps[k].state.x);
    EXPECT_GE(a.steps[k].state.v, 0.0);
    EXPECT_LE(a.steps[k].state.v, cfg.v_max);
  }
}

TEST(Forecast, StationaryLeaderGivesMonotoneApproach) {
  auto nf = parked(75);
  for (std::size_t k = 0; k <= 75; ++k) nf.states[role_index(NeighborRole::kLeader)][k] = vs(230, 0);
  for (std::size_t k = 0; k <= 75; ++k) nf.states[role_index(NeighborRole::kNearestLeader)][k] = vs(230, 0);
  RolloutConfig cfg;
  cfg.params = cf::IdmParams{5, 1.0, 1.5, 2.0, 30, 4};
  cfg.accel_max = 1.5;
  cfg.decel_floor = -2.0;
  const auto r = forecast(Kin{100, 15, 0}, nf, cfg, 230);
  double prev_x = 100;
  for (const auto& s : r.steps) {
    EXPECT_GE(s.state.x, prev_x);
    EXPECT_LT(s.state.x, 230.0);
    prev_x = s.state.x;
  }
  EXPECT_LT(r.steps.back().state.v, 1.0);
}

TEST(Forecast, ShortNeighborPredictionsAreRejected) {
  auto nf = parked(10);
  EXPECT_THROW(forecast(Kin{0, 10, 0}, nf, RolloutConfig{}, 230), ParameterError);
}

TEST(Config, FromFittedModel) {
  cf::CfParams fitted;
  fitted.params = cf::IdmParams{6, 1.2, 1.7, 2.4, 27, 4};
  const auto c = make_rollout_config(fitted);
  EXPECT_DOUBLE_EQ(c.accel_max, 1.7);
  EXPECT_DOUBLE_EQ(c.decel_floor, -2.4);
  EXPECT_DOUBLE_EQ(c.v_max, 27);
  EXPECT_EQ(c.steps(), 75u);
  fitted.params = cf::GippsParams{};
  const auto g = make_rollout_config(fitted);
  EXPECT_DOUBLE_EQ(g.accel_max, 5);
  EXPECT_DOUBLE_EQ(g.decel_floor, -5);
  EXPECT_DOUBLE_EQ(g.v_max, 35);
  RolloutConfig bad;
  bad.t_max = 0.3;
  EXPECT_THROW(bad.validate(), ParameterError);
}
