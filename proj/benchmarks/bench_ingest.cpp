#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "mergecast/ingest.hpp"

using namespace mergecast;

static void BM_SavitzkyGolay(benchmark::State& state) {
  std::vector<double> x(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.1 * static_cast<double>(i) + std::sin(0.01 * static_cast<double>(i));
  for (auto _ : state) benchmark::DoNotOptimize(ingest::savitzky_golay_smooth(x, 11, 3));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SavitzkyGolay)->Arg(200)->Arg(5000);

static void BM_Differentiate(benchmark::State& state) {
  std::vector<double> x(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.5 * static_cast<double>(i * i) * 0.01;
  for (auto _ : state) benchmark::DoNotOptimize(ingest::differentiate_kinematics(x, 0.2));
}
BENCHMARK(BM_Differentiate)->Arg(200)->Arg(5000);
