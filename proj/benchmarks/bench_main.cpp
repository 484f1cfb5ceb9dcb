#include <benchmark/benchmark.h>

#include <random>

#include "synseg/log.hpp"
#include "synseg/networks.hpp"
#include "synseg/ops.hpp"
#include "synseg/phantom.hpp"
#include "synseg/training.hpp"

using namespace synseg;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  size_t n = 1;
  for (const auto d : shape) n *= static_cast<size_t>(d);
  std::vector<float> v(n);
  for (auto& e : v) e = g(rng);
  return Tensor::from_data(std::move(shape), std::move(v), grad);
}

// Args: channels in, channels out, spatial size. Small channel counts take
// the direct kernel, larger ones im2col + GEMM.
void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), o = static_cast<int>(state.range(1));
  const int s = static_cast<int>(state.range(2));
  const auto x = random_tensor({1, c, s, s}, 1);
  const auto w = random_tensor({o, c, 3, 3}, 2);
  const auto b = random_tensor({o}, 3);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, {1, 1, PadMode::reflect}));
  state.SetItemsProcessed(state.iterations() * int64_t{9} * c * o * s * s);
}
BENCHMARK(BM_Conv3x3)->Args({1, 16, 64})->Args({16, 16, 64})->Args({32, 32, 32})->Args({64, 64, 16});

void BM_Conv3x3Backward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), s = static_cast<int>(state.range(1));
  const auto w = random_tensor({c, c, 3, 3}, 2, true);
  const auto b = random_tensor({c}, 3, true);
  for (auto _ : state) {
    const auto x = random_tensor({1, c, s, s}, 1, true);
    sum(conv2d(x, w, b, {1, 1, PadMode::zero})).backward();
  }
}
BENCHMARK(BM_Conv3x3Backward)->Args({16, 64})->Args({64, 16});

void BM_GeneratorForward(benchmark::State& state) {
  Rng rng(0);
  const auto g = build_generator({}, rng);
  const auto x = random_tensor({1, 1, 64, 64}, 4);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(g.forward(x));
}
BENCHMARK(BM_GeneratorForward)->Unit(benchmark::kMillisecond);

void BM_GeneratorForwardBackward(benchmark::State& state) {
  Rng rng(0);
  const auto g = build_generator({}, rng);
  const auto x = random_tensor({1, 1, 64, 64}, 4);
  for (auto _ : state) mean(g.forward(x)).backward();
}
BENCHMARK(BM_GeneratorForwardBackward)->Unit(benchmark::kMillisecond);

void BM_DiscriminatorForward(benchmark::State& state) {
  Rng rng(0);
  const auto d = build_discriminator(16, 3, rng);
  const auto x = random_tensor({1, 1, 64, 64}, 5);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(d.forward(x));
}
BENCHMARK(BM_DiscriminatorForward)->Unit(benchmark::kMillisecond);

// One full training step of each variant at desk scale (64x64, batch 1).
void BM_TrainStep(benchmark::State& state) {
  set_quiet(true);
  ExperimentConfig cfg;
  cfg.train.variant = static_cast<Variant>(state.range(0));
  cfg.data.n_source_scans = 4;
  cfg.data.n_target_scans = 4;
  cfg.data.n_target_supervised_scans = 4;
  const auto ds = phantom_generate(cfg.data);
  const auto data = training_data_for(ds, cfg.train);
  Trainer tr(cfg, data);
  for (auto _ : state) benchmark::DoNotOptimize(tr.step());
  state.SetLabel(variant_name(cfg.train.variant));
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(Variant::synseg))
    ->Arg(static_cast<int>(Variant::hc))
    ->Arg(static_cast<int>(Variant::seg_only))
    ->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
