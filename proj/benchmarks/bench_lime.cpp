#include <benchmark/benchmark.h>

#include <cmath>

#include "blastlime/lime/regression.hpp"
#include "blastlime/lime/superpixels.hpp"
#include "blastlime/rng.hpp"

using namespace blastlime;

namespace {

img::Image blobs(int size) {
  img::Image im(size, size, 3);
  CounterRng rng(9);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c)
        im.at(x, y, c) = static_cast<float>(0.5 + 0.3 * std::sin(0.05 * (x + 7 * c)) * std::cos(0.04 * y) +
                                             0.05 * rng.uniform());
  return im;
}

void BM_Slic(benchmark::State& state) {
  const img::Image im = blobs(224);
  lime::SlicParams p;
  p.segments = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(lime::segment_superpixels(im, p));
}
BENCHMARK(BM_Slic)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

// Args: samples, features.
void BM_KLasso(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0)), d = static_cast<std::size_t>(state.range(1));
  const auto masks = lime::sample_perturbations(d, n, 3);
  const lime::Matrix x = lime::to_matrix(masks);
  std::vector<double> y(n), w(n);
  CounterRng rng(4);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = 0.3 * x(i, 1) - 0.2 * x(i, d / 2) + 0.1 * x(i, d - 1) + 0.02 * rng.uniform();
    w[i] = lime::kernel_weight(masks[i], 0.25);
  }
  for (auto _ : state) benchmark::DoNotOptimize(lime::select_features_klasso(x, y, w, 5));
}
BENCHMARK(BM_KLasso)->Args({1000, 50})->Args({1000, 200})->Unit(benchmark::kMillisecond);

void BM_WeightedLeastSquares(benchmark::State& state) {
  const auto masks = lime::sample_perturbations(10, 1000, 5);
  const lime::Matrix x = lime::to_matrix(masks);
  std::vector<double> y(1000), w(1000, 1.0);
  for (std::size_t i = 0; i < 1000; ++i) y[i] = 0.1 * x(i, 2) + 0.2 * x(i, 7);
  for (auto _ : state) benchmark::DoNotOptimize(lime::fit_weighted_least_squares(x, y, w));
}
BENCHMARK(BM_WeightedLeastSquares);

}  // namespace
