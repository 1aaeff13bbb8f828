#include <benchmark/benchmark.h>

#include <numeric>

#include "dsts/dataset.hpp"
#include "dsts/nn.hpp"
#include "dsts/ops.hpp"
#include "dsts/training.hpp"

using namespace dsts;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

// Feature-map sized 3x3x3 convolution: batch 8, 8 channels, 4 x 8 x 8.
void BM_Conv3dForward(benchmark::State& state) {
  NoGradGuard no_grad;
  const Var x = Var::constant(random_tensor({8, 8, 4, 8, 8}, 1));
  const Var k = Var::constant(random_tensor({8, 8, 3, 3, 3}, 2));
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv3d(x, k, {1, 1, 1}).value().data().data());
}
BENCHMARK(BM_Conv3dForward)->Unit(benchmark::kMicrosecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const Var x = Var::parameter(random_tensor({8, 8, 4, 8, 8}, 1));
  const Var k = Var::parameter(random_tensor({8, 8, 3, 3, 3}, 2));
  for (auto _ : state) {
    const Var y = ops::sum(ops::conv3d(x, k, {1, 1, 1}));
    const std::vector<Var> wrt = {x, k};
    benchmark::DoNotOptimize(grad(y, wrt));
  }
}
BENCHMARK(BM_Conv3dBackward)->Unit(benchmark::kMicrosecond);

struct TrainingSetup {
  ModelConfig config;
  std::vector<VideoSample> samples;
  std::vector<std::size_t> batch;

  TrainingSetup() {
    DatasetSpec spec;
    spec.samples_per_class = 2;
    samples = generate_dataset(spec, 1);
    batch.resize(8);
    std::iota(batch.begin(), batch.end(), 0);
  }
};

void run_iterations(benchmark::State& state, bool udl) {
  const TrainingSetup setup;
  Model model(setup.config, 1);
  const auto part = partition_parameters(model);
  TrainConfig tc;
  tc.udl_enabled = udl;
  Rng rng(2);
  for (auto _ : state) benchmark::DoNotOptimize(udl_iteration(model, part, setup.samples, setup.batch, tc, rng));
}

// One training iteration of the default model at batch size 8.
void BM_UdlIteration(benchmark::State& state) { run_iterations(state, true); }
BENCHMARK(BM_UdlIteration)->Unit(benchmark::kMillisecond);

void BM_JointIteration(benchmark::State& state) { run_iterations(state, false); }
BENCHMARK(BM_JointIteration)->Unit(benchmark::kMillisecond);

void BM_EvaluateBatch(benchmark::State& state) {
  const TrainingSetup setup;
  Model model(setup.config, 1);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(model, setup.samples, 64));
}
BENCHMARK(BM_EvaluateBatch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
