#include <benchmark/benchmark.h>

#include <random>

#include "tkvseg/autograd.hpp"
#include "tkvseg/loss.hpp"
#include "tkvseg/nn.hpp"
#include "tkvseg/optim.hpp"

using namespace tkvseg;

namespace {

Tensor<float> random_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor<float> t(shape);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

void BM_Conv3dForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const auto x = random_tensor(Shape{1, 8, n, n, n}, rng);
  const auto k = random_tensor(Shape{8, 8, 3, 3, 3}, rng);
  const auto b = random_tensor(Shape{8}, rng);
  for (auto _ : state) {
    Graph<float> g;
    auto y = conv3d(g.constant(x), g.constant(k), g.constant(b));
    benchmark::DoNotOptimize(y.value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Conv3dForward)->Arg(16)->Arg(32);

void BM_Conv3dBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  const auto x = random_tensor(Shape{1, 8, n, n, n}, rng);
  const auto k = random_tensor(Shape{8, 8, 3, 3, 3}, rng);
  const auto b = random_tensor(Shape{8}, rng);
  for (auto _ : state) {
    Graph<float> g;
    auto y = conv3d(g.parameter(0, x), g.parameter(1, k), g.parameter(2, b));
    auto grads = g.backward(sum(y));
    benchmark::DoNotOptimize(grads.size());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Conv3dBackward)->Arg(16)->Arg(32);

void BM_TrainStep(benchmark::State& state) {
  NetConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = static_cast<std::size_t>(state.range(0));
  cfg.tasks = {kidney_task(), liver_task()};
  auto net = MultiTaskNet<float>::build(cfg);
  std::mt19937_64 rng(3);
  std::vector<TaskBatch<float>> batches;
  for (const char* task : {"kidney", "liver"}) {
    TaskBatch<float> b;
    b.task = task;
    b.image = random_tensor(Shape{1, 1, 32, 32, 32}, rng);
    b.labels = LabelTensor(Shape{1, 32, 32, 32});
    for (std::size_t i = 0; i < b.labels.numel(); ++i) b.labels[i] = static_cast<std::uint8_t>(rng() % 2);
    batches.push_back(std::move(b));
  }
  AdamState<float> adam;
  LossConfig loss;
  for (auto _ : state) {
    benchmark::DoNotOptimize(train_step<float>(net, batches, loss, adam).total);
  }
}
BENCHMARK(BM_TrainStep)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
