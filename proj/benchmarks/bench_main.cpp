#include <benchmark/benchmark.h>

#include "dfd/layers.hpp"
#include "dfd/models.hpp"
#include "dfd/ops.hpp"
#include "dfd/optim.hpp"

namespace {

using namespace dfd;

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = Tensor::uniform({n, n}, 1);
  const auto b = Tensor::uniform({n, n}, 2);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const auto p = make_conv2d<float>(c, c, 3, 1, Padding::same, true, rng);
  const auto x = Tensor::uniform({8, c, 32, 32}, 4);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, p).data().data());
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(32);

void BM_Conv2dBackward(benchmark::State& state) {
  Rng rng(5);
  auto p = make_conv2d<float>(16, 16, 3, 1, Padding::same, true, rng);
  p.kernels.set_requires_grad(true);
  const auto x = Tensor::uniform({8, 16, 32, 32}, 6);
  for (auto _ : state) {
    sum(conv2d(x, p)).backward();
    p.kernels.zero_grad();
  }
}
BENCHMARK(BM_Conv2dBackward);

void BM_DeskForward(benchmark::State& state) {
  const auto kind = static_cast<ModelKind>(state.range(0));
  const auto model = build_model(ModelConfig::defaults(kind, Scale::desk), 7);
  const auto x = Tensor::uniform({16, 3, 32, 32}, 8, 0.0f, 1.0f);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, Mode::inference).data().data());
  state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_DeskForward)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

void BM_DeskTrainStep(benchmark::State& state) {
  const auto kind = static_cast<ModelKind>(state.range(0));
  auto model = build_model(ModelConfig::defaults(kind, Scale::desk), 9);
  auto params = model.parameters().trainable();
  const auto x = Tensor::uniform({16, 3, 32, 32}, 10, 0.0f, 1.0f);
  auto labels = Tensor::zeros({16});
  for (std::size_t i = 0; i < 16; i += 2) labels.mutable_data()[i] = 1.0f;
  Adam adam;
  std::uint64_t step = 0;
  for (auto _ : state) {
    model.parameters().zero_grad();
    bce_loss(model.forward(x, Mode::training, step++), labels).backward();
    adam.step(params);
  }
  state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_DeskTrainStep)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

void BM_PaperForward(benchmark::State& state) {
  const auto kind = static_cast<ModelKind>(state.range(0));
  const auto model = build_model(ModelConfig::defaults(kind, Scale::paper), 11);
  const auto x = Tensor::uniform({1, 3, 224, 224}, 12, 0.0f, 1.0f);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, Mode::inference).data().data());
  state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_PaperForward)->DenseRange(0, 3)->Unit(benchmark::kMillisecond)->Iterations(1);

}  // namespace

BENCHMARK_MAIN();
