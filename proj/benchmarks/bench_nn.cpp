#include <benchmark/benchmark.h>

#include "blastlime/model/network.hpp"
#include "blastlime/nn/layers.hpp"
#include "blastlime/rng.hpp"

using namespace blastlime;
using FTensor = nn::Tensor<float>;

namespace {

FTensor uniform(nn::Shape shape, std::uint64_t seed) {
  FTensor t(std::move(shape));
  CounterRng rng(seed);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

// Args: channels in, channels out, spatial size.
void BM_Conv3x3Forward(benchmark::State& state) {
  const auto cin = static_cast<std::size_t>(state.range(0)), cout = static_cast<std::size_t>(state.range(1));
  const auto hw = static_cast<std::size_t>(state.range(2));
  const FTensor x = uniform({1, cin, hw, hw}, 1), w = uniform({cout, cin, 3, 3}, 2), b({cout});
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d_forward(x, w, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(hw * hw * cin * cout * 9));
}
BENCHMARK(BM_Conv3x3Forward)->Args({3, 32, 224})->Args({64, 64, 224})->Args({32, 32, 55})->Unit(benchmark::kMillisecond);

void BM_Conv3x3Backward(benchmark::State& state) {
  const auto cin = static_cast<std::size_t>(state.range(0)), cout = static_cast<std::size_t>(state.range(1));
  const auto hw = static_cast<std::size_t>(state.range(2));
  const FTensor x = uniform({1, cin, hw, hw}, 1), w = uniform({cout, cin, 3, 3}, 2), g = uniform({1, cout, hw, hw}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d_backward(x, w, g));
}
BENCHMARK(BM_Conv3x3Backward)->Args({64, 64, 224})->Args({32, 32, 55})->Unit(benchmark::kMillisecond);

void BM_NetworkInference(benchmark::State& state) {
  auto net = model::Network::build(model::ModelSpec::blastocyst(), 1);
  const FTensor x = uniform({static_cast<std::size_t>(state.range(0)), 3, 224, 224}, 4);
  net.forward(x, nn::Phase::Train, 0);
  for (auto _ : state) benchmark::DoNotOptimize(net.predict_proba(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_NetworkInference)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_TrainingStep(benchmark::State& state) {
  auto net = model::Network::build(model::ModelSpec::blastocyst(), 1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const FTensor x = uniform({n, 3, 224, 224}, 5);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 2);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward_backward(x, labels, 1).loss);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainingStep)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
