#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mergecast/error.hpp"
#include "mergecast/synth.hpp"
#include "oracles.hpp"

using namespace mergecast;
using namespace mergecast::synth;

namespace {

SyntheticVehicle vehicle(int id, int lane, double x, double v, cf::ModelParams p) {
  SyntheticVehicle s;
  s.id = id;
  s.lane = lane;
  s.entry_x = x;
  s.entry_speed = v;
  s.params = p;
  return s;
}

}  // namespace

TEST(Synth, FreeVehicleWithZeroModelKeepsItsSpeed) {
  SyntheticScenario sc;
  sc.duration = 10;
  sc.vehicles.push_back(vehicle(1, 6, 0, 20, cf::GhrParams{0, 0, 1}));
  const auto tracks = generate_synthetic_corpus(sc);
  ASSERT_EQ(tracks.size(), 1u);
  const auto& t = tracks[0];
  EXPECT_EQ(t.size(), 101u);
  for (std::size_t k = 0; k < t.size(); ++k) {
    EXPECT_NEAR(t.states[k].x, 2.0 * static_cast<double>(k), 1e-9);
    EXPECT_DOUBLE_EQ(t.states[k].v, 20);
    EXPECT_DOUBLE_EQ(t.states[k].a, 0);
    EXPECT_DOUBLE_EQ(t.states[k].y, sc.geometry.y_tar);
    EXPECT_EQ(t.lane_ids[k], 6);
  }
}

TEST(Synth, IdmFollowerMatchesFormulaEveryStep) {
  SyntheticScenario sc;
  sc.duration = 12;
  const cf::IdmParams p{6, 1.3, 1.5, 2.0, 28, 4};
  sc.vehicles.push_back(vehicle(1, 6, 60, 15, cf::GhrParams{0, 0, 1}));
  sc.vehicles.push_back(vehicle(2, 6, 0, 22, p));
  const auto tracks = generate_synthetic_corpus(sc);
  ASSERT_EQ(tracks.size(), 2u);
  const auto& lead = tracks[0];
  const auto& fol = tracks[1];
  ASSERT_EQ(lead.size(), fol.size());
  for (std::size_t k = 0; k < fol.size(); ++k) {
    const auto& f = fol.states[k];
    const auto& l = lead.states[k];
    const double want = std::clamp(oracle::idm(f.x, f.v, l.x, l.v, p.s0, p.h_d, p.a_max, p.b_max, p.v_d, p.delta),
                                   -sc.decel_limit, sc.accel_limit);
    EXPECT_NEAR(f.a, want, 1e-9) << "step " << k;
    if (k + 1 < fol.size()) {
      const double v = std::max(0.0, f.v + f.a * sc.dt);
      EXPECT_NEAR(fol.states[k + 1].v, v, 1e-12);
      EXPECT_NEAR(fol.states[k + 1].x, f.x + v * sc.dt, 1e-9);
    }
    EXPECT_GT(l.x - f.x, 0.0);
  }
}

TEST(Synth, CollisionRaisesScenarioError) {
  SyntheticScenario sc;
  sc.duration = 10;
  sc.vehicles.push_back(vehicle(1, 6, 40, 10, cf::GhrParams{0, 0, 1}));
  sc.vehicles.push_back(vehicle(2, 6, 0, 30, cf::GhrParams{0, 0, 1}));
  try {
    generate_synthetic_corpus(sc);
    FAIL() << "expected a collision";
  } catch (const ScenarioError& e) {
    EXPECT_NE(std::string(e.what()).find("vehicle 2"), std::string::npos);
  }
}

TEST(Synth, ScriptedLaneChangeAndLateralDrift) {
  SyntheticScenario sc;
  sc.duration = 8;
  sc.lateral_lead = 2;
  auto v = vehicle(1, 7, 0, 20, cf::GhrParams{0, 0, 1});
  v.lc_time = 4.0;
  sc.vehicles.push_back(v);
  const auto t = generate_synthetic_corpus(sc)[0];
  EXPECT_EQ(t.lane_ids[39], 7);
  EXPECT_EQ(t.lane_ids[40], 6);
  EXPECT_DOUBLE_EQ(t.states[10].y, sc.geometry.y_cur);
  EXPECT_NEAR(t.states[40].y, 0.5 * (sc.geometry.y_cur + sc.geometry.y_tar), 1e-12);
  EXPECT_DOUBLE_EQ(t.states[70].y, sc.geometry.y_tar);
  EXPECT_NEAR(t.states[35].u, sc.geometry.y_tar / 4.0, 1e-12);
}

TEST(Synth, RampVehicleStopsAtTheWall) {
  SyntheticScenario sc;
  sc.duration = 60;
  sc.vehicles.push_back(vehicle(1, 7, 0, 15, cf::IdmParams{5, 1.2, 1.5, 2.0, 25, 4}));
  const auto t = generate_synthetic_corpus(sc)[0];
  EXPECT_LT(t.states.back().x, sc.geometry.x_end);
  EXPECT_LT(t.states.back().v, 0.1);
}

TEST(Synth, InvalidScenariosAreRejected) {
  SyntheticScenario sc;
  sc.vehicles.push_back(vehicle(1, 6, 0, 10, cf::GhrParams{}));
  sc.vehicles.push_back(vehicle(1, 6, 50, 10, cf::GhrParams{}));
  EXPECT_THROW(sc.validate(), ParameterError);
  sc.vehicles.pop_back();
  sc.vehicles[0].lane = 3;
  EXPECT_THROW(sc.validate(), ParameterError);
  sc.vehicles[0].lane = 6;
  sc.vehicles[0].lc_time = 2.0;
  EXPECT_THROW(sc.validate(), ParameterError);
}

TEST(Synth, MergeScenarioIsCollisionFreeAndDeterministic) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    MergeTrafficConfig cfg;
    cfg.duration = 150;
    cfg.seed = seed;
    const auto sc = make_merge_scenario(cfg);
    std::vector<Track> a, b;
    ASSERT_NO_THROW(a = generate_synthetic_corpus(sc)) << "seed " << seed;
    b = generate_synthetic_corpus(make_merge_scenario(cfg));
    ASSERT_EQ(a.size(), b.size());
    std::size_t merged = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].states, b[i].states);
      int changes = 0;
      for (std::size_t k = 1; k < a[i].size(); ++k) {
        changes += a[i].lane_ids[k] != a[i].lane_ids[k - 1];
        EXPECT_GE(a[i].states[k].x, a[i].states[k - 1].x);
      }
      EXPECT_LE(changes, 1);
      merged += static_cast<std::size_t>(changes);
    }
    EXPECT_GT(merged, 5u);
  }
}

TEST(Synth, NoiseIsSeededPerVehicle) {
  MergeTrafficConfig cfg;
  cfg.duration = 60;
  cfg.position_noise = 0.1;
  const auto sc = make_merge_scenario(cfg);
  const auto a = generate_synthetic_corpus(sc);
  auto clean = sc;
  clean.position_noise = 0;
  const auto b = generate_synthetic_corpus(clean);
  ASSERT_EQ(a.size(), b.size());
  double sq = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i].size(); ++k) {
      const double d = a[i].states[k].x - b[i].states[k].x;
      sq += d * d;
      ++n;
    }
  }
  EXPECT_NEAR(std::sqrt(sq / static_cast<double>(n)), 0.1, 0.01);
}
