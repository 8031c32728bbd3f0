#include <random>

#include <benchmark/benchmark.h>

#include "dualseg/data_pipeline.hpp"
#include "dualseg/evaluation.hpp"
#include "dualseg/layers.hpp"
#include "dualseg/network.hpp"
#include "dualseg/trainer.hpp"

namespace {

using namespace dualseg;

Tensor<float> random_tensor(Shape4 s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  Tensor<float> t(s);
  for (float& v : t.values()) v = d(rng);
  return t;
}

// Same network shape as configs/phantom_benchmark.json.
NetworkConfig benchmark_net(bool modules) {
  NetworkConfig c;
  c.channel_dims = {8, 16, 32, 64, 128};
  c.crop_h = c.crop_w = 32;
  c.attention_dim = 16;
  c.enable_mem = modules;
  c.enable_cif = modules;
  return c;
}

void BM_Conv3x3(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  const int size = static_cast<int>(state.range(1));
  Conv2d<float> conv("c", channels, channels, 3);
  std::mt19937_64 rng(1);
  conv.init(rng);
  ParamRefs<float> params;
  conv.collect(params);
  for (Param<float>* p : params) p->grad = Tensor<float>(p->value.shape());
  const Tensor<float> x = random_tensor({8, channels, size, size}, 2);
  const Tensor<float> dy = random_tensor({8, channels, size, size}, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv.forward(x, Mode::Train));
    benchmark::DoNotOptimize(conv.backward(dy));
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv3x3)->Args({8, 32})->Args({32, 8})->Args({128, 2})->Unit(benchmark::kMicrosecond);

void BM_ModelForward(benchmark::State& state) {
  DualBranchNet<float> net(benchmark_net(state.range(0) != 0), 4);
  const Tensor<float> a = random_tensor({8, 1, 32, 32}, 5);
  const Tensor<float> b = random_tensor({8, 1, 32, 32}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(a, b, Mode::Infer));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  PhantomSpec spec;
  spec.n_patients = 10;
  const DatasetSplit split = make_split(generate_phantom(spec), 0.5, 7, {32, 32});
  TrainState train_state(benchmark_net(state.range(0) != 0), 8);
  const std::vector<Batch> batches = make_batches(split, 4, 4, 8, 0);
  const TrainConfig config;
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(train_step(train_state, batches[i++ % batches.size()], config));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_DiceScore(benchmark::State& state) {
  std::mt19937_64 rng(9);
  Mask p(160, 160), g(160, 160);
  for (auto& v : p.values) v = static_cast<unsigned char>(rng() & 1u);
  for (auto& v : g.values) v = static_cast<unsigned char>(rng() & 1u);
  for (auto _ : state) benchmark::DoNotOptimize(dice_score(p, g));
}
BENCHMARK(BM_DiceScore);

}  // namespace

BENCHMARK_MAIN();
