#include "selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>

#include "blastlime/eval/metrics.hpp"
#include "blastlime/lime/explain.hpp"
#include "blastlime/nn/gradcheck.hpp"
#include "blastlime/rng.hpp"

namespace blastlime::cli {
namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// 100x80 image of 5x4 textured colour blocks.
img::Image block_image() {
  img::Image im(100, 80, 3);
  for (int y = 0; y < 80; ++y) {
    for (int x = 0; x < 100; ++x) {
      const int block = (y / 20) * 5 + x / 20;
      const float tex = ((x / 2 + y / 2) % 2 == 0) ? 0.06F : -0.06F;
      im.at(x, y, 0) = 0.15F + 0.035F * static_cast<float>(block) + tex;
      im.at(x, y, 1) = 0.5F + 0.3F * std::sin(static_cast<float>(block) * 1.7F) + tex;
      im.at(x, y, 2) = 0.5F + 0.3F * std::cos(static_cast<float>(block) * 2.3F) + tex;
    }
  }
  return im;
}

// Recovers z' from a masked image: a segment counts as present when a probe
// pixel that differs from the segment mean still holds its original value.
struct MaskReader {
  img::Image original;
  lime::SuperpixelMap map;
  std::vector<std::size_t> probe;

  MaskReader(img::Image im, lime::SuperpixelMap m) : original(std::move(im)), map(std::move(m)) {
    probe.assign(static_cast<std::size_t>(map.count), 0);
    std::vector<float> best(static_cast<std::size_t>(map.count), -1.0F);
    const auto data = original.data();
    for (std::size_t p = 0; p < map.labels.size(); ++p) {
      const auto l = static_cast<std::size_t>(map.labels[p]);
      const float diff = std::abs(data[p * 3] - map.mean_colors[l * 3]);
      if (diff > best[l]) {
        best[l] = diff;
        probe[l] = p;
      }
    }
  }

  std::vector<double> read(const img::Image& masked) const {
    std::vector<double> z(probe.size());
    for (std::size_t j = 0; j < probe.size(); ++j) z[j] = masked.data()[probe[j] * 3] == original.data()[probe[j] * 3];
    return z;
  }
};

CheckOutcome lime_linear_oracle() {
  CheckOutcome out{"lime.linear_oracle", false, ""};
  const img::Image im = block_image();
  lime::LimeConfig cfg;
  cfg.segments = 20;
  cfg.samples = 1000;
  cfg.k = 5;
  cfg.seed = 7;
  const lime::SuperpixelMap map = lime::segment_superpixels(im, cfg.slic());
  if (map.count != 20) {
    out.detail = "expected 20 superpixels, got " + std::to_string(map.count);
    return out;
  }
  std::vector<double> w(20, 0.0);
  const int big[5] = {3, 11, 16, 7, 0};
  const double mag[5] = {0.25, -0.2, 0.15, 0.1, -0.07};
  for (int i = 0; i < 5; ++i) w[static_cast<std::size_t>(big[i])] = mag[i];
  const MaskReader reader(im, map);
  auto predict = [&](const img::Image& x) {
    const std::vector<double> z = reader.read(x);
    double p = 0.5;
    for (std::size_t j = 0; j < z.size(); ++j) p += w[j] * (z[j] - 0.5);
    return std::vector<double>{1.0 - p, p};
  };
  cfg.explained_class = 1;
  const lime::Explanation ex = lime::explain(predict, im, cfg);

  std::vector<int> expected(big, big + 5), got = ex.segments;
  std::sort(expected.begin(), expected.end());
  std::sort(got.begin(), got.end());
  if (got != expected) {
    out.detail = "selected segments differ from the five largest weights";
    return out;
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < ex.segments.size(); ++i) {
    const double truth = w[static_cast<std::size_t>(ex.segments[i])];
    worst = std::max(worst, std::abs(ex.weights[i] - truth) / std::abs(truth));
  }
  out.passed = worst < 0.05 && ex.fidelity >= 0.99;
  out.detail = "max weight error " + fmt("%.2e", worst) + ", fidelity " + fmt("%.6f", ex.fidelity);
  return out;
}

CheckOutcome lime_constant_model() {
  CheckOutcome out{"lime.constant_model", false, ""};
  lime::LimeConfig cfg;
  cfg.segments = 20;
  cfg.samples = 200;
  const lime::Explanation ex = lime::explain([](const img::Image&) { return std::vector<double>{0.3, 0.7}; },
                                             block_image(), cfg);
  const bool zero = std::all_of(ex.weights.begin(), ex.weights.end(), [](double v) { return v == 0.0; });
  out.passed = zero && std::abs(ex.intercept - 0.7) < 1e-9 && ex.fidelity == 1.0;
  out.detail = "intercept " + fmt("%.9f", ex.intercept) + ", fidelity " + fmt("%.3f", ex.fidelity);
  return out;
}

CheckOutcome lime_optimality() {
  CheckOutcome out{"lime.surrogate_optimality", false, ""};
  CounterRng rng(99);
  const std::size_t n = 300, k = 4;
  lime::Matrix x(n, k);
  std::vector<double> y(n), wts(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.2;
    for (std::size_t j = 0; j < k; ++j) {
      x(i, j) = rng.bernoulli(0.5) ? 1.0 : 0.0;
      v += 0.1 * static_cast<double>(j + 1) * x(i, j);
    }
    y[i] = v + rng.uniform(-0.05, 0.05);
    wts[i] = rng.uniform(0.1, 1.0);
  }
  const lime::LeastSquaresFit fit = lime::fit_weighted_least_squares(x, y, wts);
  const double base = lime::weighted_square_loss(x, y, wts, fit);
  int worse = 0;
  for (int t = 0; t < 100; ++t) {
    lime::LeastSquaresFit p = fit;
    const std::size_t c = rng.below(k + 1);
    const double delta = rng.bernoulli(0.5) ? 1e-3 : -1e-3;
    if (c == k) p.intercept += delta;
    else p.coefficients[c] += delta;
    if (lime::weighted_square_loss(x, y, wts, p) < base) ++worse;
  }
  out.passed = worse == 0;
  out.detail = std::to_string(worse) + " of 100 perturbations reduced the loss";
  return out;
}

CheckOutcome metrics_reference_row() {
  CheckOutcome out{"metrics.reference_row", false, ""};
  eval::ConfusionMatrix cm;
  cm.tp = 10;
  cm.fp = 2;
  cm.fn = 0;
  cm.tn = 8;
  const eval::MetricsReport r = eval::metrics(cm);
  const double expected[5] = {90.0, 83.3, 100.0, 90.9, 100.0};
  const double got[5] = {*r.accuracy * 100, *r.precision * 100, *r.recall * 100, *r.f1 * 100, *r.sensitivity * 100};
  double worst = 0.0;
  for (int i = 0; i < 5; ++i) worst = std::max(worst, std::abs(got[i] - expected[i]));
  out.passed = worst <= 0.05;
  out.detail = "max deviation " + fmt("%.4f", worst) + " percentage points";
  return out;
}

CheckOutcome metrics_auc() {
  CheckOutcome out{"metrics.auc_pair_counting", false, ""};
  CounterRng rng(2024);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.below(49);
    std::vector<double> s(n);
    std::vector<char> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(8)) / 8.0;  // coarse grid forces ties
      pos[i] = static_cast<char>(rng.bernoulli(0.5));
    }
    pos[0] = 1;
    pos[1] = 0;
    std::unique_ptr<bool[]> flags(new bool[n]);
    for (std::size_t i = 0; i < n; ++i) flags[i] = pos[i] != 0;
    const std::span<const bool> labels(flags.get(), n);
    worst = std::max(worst, std::abs(eval::roc_auc(s, labels).auc - eval::auc_pair_count(s, labels)));
  }
  out.passed = worst < 1e-9;
  out.detail = "max |trapezoid - pair count| " + fmt("%.2e", worst);
  return out;
}

template <typename F>
CheckOutcome guarded(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {name, false, std::string("threw: ") + e.what()};
  }
}

}  // namespace

std::vector<CheckOutcome> run_selfcheck(const SelfcheckOptions& options) {
  std::vector<CheckOutcome> results;
  nn::GradCheckOptions g;
  g.inject_fault = options.inject_fault;
  for (const std::string& layer : nn::gradcheck_layers()) {
    results.push_back(guarded("gradient." + layer, [&] {
      const nn::GradCheckResult r = nn::run_gradient_check(layer, g);
      return CheckOutcome{"gradient." + layer, r.passed,
                          std::to_string(r.instances) + " instances, max relative error " +
                              fmt("%.2e", r.max_relative_error)};
    }));
  }
  results.push_back(guarded("lime.linear_oracle", lime_linear_oracle));
  results.push_back(guarded("lime.constant_model", lime_constant_model));
  results.push_back(guarded("lime.surrogate_optimality", lime_optimality));
  results.push_back(guarded("metrics.reference_row", metrics_reference_row));
  results.push_back(guarded("metrics.auc_pair_counting", metrics_auc));
  return results;
}

}  // namespace blastlime::cli
