// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "magms/data.hpp"
#include "magms/evaluation.hpp"
#include "magms/metrics.hpp"
#include "magms/nn.hpp"
#include "magms/rng.hpp"
#include "magms/theory.hpp"
#include "magms/training.hpp"

namespace magms {
namespace {

Tensor random_activation(std::int64_t channels, std::int64_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({channels, n, n, n});
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

std::vector<float> random_weights(std::int64_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> w(static_cast<std::size_t>(n));
  for (auto& v : w) v = static_cast<float>(rng.uniform(-0.1, 0.1));
  return w;
}

// Args: extent, stride.
void BM_Conv3dForward(benchmark::State& state) {
  const nn::ConvGeometry g{8, 16, 3, static_cast<int>(state.range(1))};
  const auto x = random_activation(8, state.range(0), 1);
  const auto w = random_weights(g.weight_size(), 2);
  const std::vector<float> b(16, 0.0f);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv3d_forward<float>(x, w, b, g));
}
BENCHMARK(BM_Conv3dForward)->Args({32, 1})->Args({32, 2})->Args({16, 1})->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const nn::ConvGeometry g{8, 16, 3, static_cast<int>(state.range(1))};
  const auto x = random_activation(8, state.range(0), 1);
  const auto w = random_weights(g.weight_size(), 2);
  const std::vector<float> b(16, 0.0f);
  const auto y = nn::conv3d_forward<float>(x, w, b, g);
  const auto dy = random_activation(16, y.shape()[1], 3);
  std::vector<float> dw(w.size()), db(16);
  Tensor dx;
  for (auto _ : state) {
    nn::conv3d_backward<float>(x, dy, w, g, dw, db, &dx);
    benchmark::DoNotOptimize(dx);
  }
}
BENCHMARK(BM_Conv3dBackward)->Args({32, 1})->Args({32, 2})->Unit(benchmark::kMillisecond);

Dataset phantom(int modalities, std::int64_t n) {
  auto spec = PhantomSpec::standard(modalities);
  spec.grid = {n, n, n};
  spec.seed = 5;
  return generate_phantom(spec, 6);
}

ExperimentConfig config_for(const Dataset& ds) {
  ExperimentConfig c;
  c.modalities = ds.modalities;
  c.num_classes = ds.num_classes;
  const auto g = ds.subjects.front().grid_shape();
  c.input_shape = {g.at(0), g.at(1), g.at(2)};
  return c;
}

// Arg: modality count.
void BM_TrainStep(benchmark::State& state) {
  const auto ds = phantom(static_cast<int>(state.range(0)), 32);
  const auto config = config_for(ds);
  TrainState train_state(config);
  const auto batch = make_batch(config, ds.subset(Split::train), 0);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(train_state, batch));
}
BENCHMARK(BM_TrainStep)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_SubsetSweep(benchmark::State& state) {
  const auto ds = phantom(4, 32);
  const auto config = config_for(ds);
  const auto net = make_network(config, model_init_seed(config));
  const auto subjects = align_samples(ds, config.modalities, Split::test);
  for (auto _ : state) benchmark::DoNotOptimize(sweep_network(*net, subjects));
}
BENCHMARK(BM_SubsetSweep)->Unit(benchmark::kMillisecond);

// Arg: extent.
void BM_Hd95(benchmark::State& state) {
  const auto ds = phantom(2, state.range(0));
  const auto& a = ds.subjects[0].labels.classes;
  const auto& b = ds.subjects[1].labels.classes;
  for (auto _ : state) benchmark::DoNotOptimize(hd95(a, b, 1, {1.0, 1.0, 1.0}));
}
BENCHMARK(BM_Hd95)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_SweepBound(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(sweep_bound(state.range(0), 1));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SweepBound)->Arg(100000);

}  // namespace
}  // namespace magms

BENCHMARK_MAIN();
