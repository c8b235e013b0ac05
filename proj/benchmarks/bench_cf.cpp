#include <benchmark/benchmark.h>

#include <vector>

#include "mergecast/cf.hpp"

using namespace mergecast;

namespace {

std::vector<cf::FitSample> idm_window(const cf::IdmParams& p) {
  std::vector<cf::FitSample> w(cf::kFitWindowSteps);
  VehicleState self{0, 0, 14, 0, 0, 0}, leader{35, 0, 16, 0, 0, 0};
  for (auto& s : w) {
    s.self = self;
    s.leader = leader;
    s.observed_accel = cf::idm_accel(self, leader, p).value;
    self.v += 0.2 * s.observed_accel;
    self.x += 0.2 * self.v;
    leader.x += 0.2 * leader.v;
  }
  return w;
}

}  // namespace

static void BM_IdmAccel(benchmark::State& state) {
  const cf::IdmParams p{};
  VehicleState self{0, 0, 14, 0, 0, 0}, leader{35, 0, 16, 0, 0, 0};
  for (auto _ : state) {
    benchmark::DoNotOptimize(cf::idm_accel(self, leader, p));
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_IdmAccel);

static void BM_FitWindow(benchmark::State& state) {
  const auto family = static_cast<cf::Family>(state.range(0));
  const auto window = idm_window(cf::IdmParams{6, 1.2, 1.4, 2.2, 28, 4});
  cf::FitOptions opt;
  opt.starts = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(cf::fit_cf(family, window, opt));
  state.SetLabel(std::string(cf::family_name(family)));
}
BENCHMARK(BM_FitWindow)->Args({0, 4})->Args({1, 4})->Args({2, 4})->Args({0, 16})->Unit(benchmark::kMillisecond);
