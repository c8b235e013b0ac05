#include <benchmark/benchmark.h>

#include <vector>

#include "mergecast/forest.hpp"
#include "mergecast/rng.hpp"

using namespace mergecast;

namespace {

std::vector<forest::Sample> samples(std::size_t n) {
  Rng rng(17);
  std::vector<forest::Sample> out(n);
  for (auto& s : out) {
    for (auto& f : s.features) f = rng.uniform(-1, 1);
    s.label = s.features[37] + 0.3 * s.features[5] > 0 ? 1 : 0;
  }
  return out;
}

}  // namespace

static void BM_TrainForest(benchmark::State& state) {
  const auto data = samples(static_cast<std::size_t>(state.range(0)));
  forest::ForestConfig cfg;
  cfg.n_trees = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(forest::train_forest(data, forest::Kind::kCumulative, 3, cfg));
}
BENCHMARK(BM_TrainForest)->Args({400, 100})->Args({2000, 100})->Unit(benchmark::kMillisecond);

static void BM_PredictForest(benchmark::State& state) {
  const auto data = samples(1000);
  const auto f = forest::train_forest(data, forest::Kind::kCumulative, 3, forest::ForestConfig{});
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(forest::predict_lc(f, data[i % data.size()].features));
    ++i;
  }
}
BENCHMARK(BM_PredictForest);
