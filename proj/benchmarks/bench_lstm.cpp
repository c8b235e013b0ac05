#include <benchmark/benchmark.h>

#include <vector>

#include "mergecast/lstm.hpp"
#include "mergecast/rng.hpp"

using namespace mergecast;

namespace {

std::vector<lstm::TrainWindow> windows(std::size_t n) {
  Rng rng(3);
  std::vector<lstm::TrainWindow> out(n);
  for (auto& w : out) {
    const double v = rng.uniform(0.02, 0.06);
    for (std::size_t k = 0; k < w.input.size(); ++k) w.input[k] = v * static_cast<double>(k);
    w.target = v * static_cast<double>(w.input.size());
  }
  return out;
}

}  // namespace

// Args: layers, hidden, batch
static void BM_LstmForward(benchmark::State& state) {
  lstm::Network net({static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)), 1},
                    lstm::LaneTag::kRamp, 1);
  const auto ws = windows(static_cast<std::size_t>(state.range(2)));
  Eigen::MatrixXd in(static_cast<Eigen::Index>(lstm::kWindowInput), static_cast<Eigen::Index>(ws.size()));
  for (Eigen::Index b = 0; b < in.cols(); ++b)
    for (Eigen::Index t = 0; t < in.rows(); ++t) in(t, b) = ws[static_cast<std::size_t>(b)].input[static_cast<std::size_t>(t)];
  for (auto _ : state) benchmark::DoNotOptimize(net.predict(in));
  state.SetItemsProcessed(state.iterations() * state.range(2));
}
BENCHMARK(BM_LstmForward)->Args({2, 32, 64})->Args({4, 100, 1})->Args({4, 100, 64})->Unit(benchmark::kMicrosecond);

static void BM_LstmGradient(benchmark::State& state) {
  lstm::Network net({static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)), 1},
                    lstm::LaneTag::kRamp, 1);
  const auto ws = windows(static_cast<std::size_t>(state.range(2)));
  std::vector<const lstm::TrainWindow*> batch;
  for (const auto& w : ws) batch.push_back(&w);
  Eigen::VectorXd grad;
  for (auto _ : state) benchmark::DoNotOptimize(net.loss_and_gradient(batch, 1.0, &grad));
  state.SetItemsProcessed(state.iterations() * state.range(2));
}
BENCHMARK(BM_LstmGradient)->Args({2, 32, 64})->Args({4, 100, 64})->Unit(benchmark::kMillisecond);
