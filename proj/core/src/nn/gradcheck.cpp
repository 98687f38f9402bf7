#include "blastlime/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "blastlime/error.hpp"
#include "blastlime/nn/layers.hpp"
#include "blastlime/nn/lstm.hpp"
#include "blastlime/rng.hpp"

namespace blastlime::nn {
namespace {

using T = Tensor<double>;

T random_tensor(Shape shape, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  T t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so ReLU kinks sit outside the FD stencil.
T away_from_zero(Shape shape, CounterRng& rng) {
  T t(std::move(shape));
  for (double& v : t.data()) {
    const double m = rng.uniform(0.05, 1.0);
    v = rng.bernoulli(0.5) ? m : -m;
  }
  return t;
}

double dot(const T& a, const T& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Checker {
  const GradCheckOptions& options;
  bool corrupt = false;
  double worst = 0.0;

  // Compares analytic gradient `g` of loss() with respect to `x`.
  void compare(T& x, T g, const std::function<double()>& loss) {
    if (corrupt && !g.empty()) {
      g[0] += 1e-2 * (1.0 + std::abs(g[0]));
      corrupt = false;
    }
    const double h = options.step;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + h;
      const double plus = loss();
      x[i] = saved - h;
      const double minus = loss();
      x[i] = saved;
      worst = std::max(worst, relative_error(g[i], (plus - minus) / (2.0 * h)));
    }
  }
};

// Distinct values so max-pool windows have a unique, well-separated maximum.
T distinct_tensor(Shape shape, CounterRng& rng) {
  T t(std::move(shape));
  std::vector<double> values(t.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = 0.01 * static_cast<double>(i) - 0.3;
  shuffle(values.begin(), values.end(), rng);
  std::copy(values.begin(), values.end(), t.ptr());
  return t;
}

void check_conv(Checker& c, CounterRng& rng) {
  const std::size_t n = 1 + rng.below(2), cin = 1 + rng.below(3), cout = 1 + rng.below(3);
  const std::size_t h = 3 + rng.below(4), w = 3 + rng.below(4);
  T x = random_tensor({n, cin, h, w}, rng);
  T wt = random_tensor({cout, cin, 3, 3}, rng);
  T b = random_tensor({cout}, rng);
  const T r = random_tensor({n, cout, h, w}, rng);
  auto loss = [&] { return dot(conv2d_forward(x, wt, b), r); };
  Conv2dGrads<double> g = conv2d_backward(x, wt, r);
  c.compare(x, g.input, loss);
  c.compare(wt, g.weights, loss);
  c.compare(b, g.bias, loss);
}

void check_batchnorm(Checker& c, CounterRng& rng) {
  const std::size_t n = 2 + rng.below(2), ch = 1 + rng.below(3), h = 2 + rng.below(3), w = 2 + rng.below(3);
  T x = random_tensor({n, ch, h, w}, rng, -2.0, 2.0);
  BatchNormParams<double> p = BatchNormParams<double>::identity(ch);
  p.scale = random_tensor({ch}, rng, 0.5, 1.5);
  p.offset = random_tensor({ch}, rng);
  const T r = random_tensor({n, ch, h, w}, rng);
  auto loss = [&] {
    BatchNormParams<double> copy = p;
    return dot(batchnorm_forward(x, copy, Phase::Train), r);
  };
  BatchNormParams<double> copy = p;
  BatchNormCache<double> cache;
  batchnorm_forward(x, copy, Phase::Train, &cache);
  BatchNormGrads<double> g = batchnorm_backward(x, p, cache, r);
  c.compare(x, g.input, loss);
  c.compare(p.scale, g.scale, loss);
  c.compare(p.offset, g.offset, loss);
}

void check_relu(Checker& c, CounterRng& rng) {
  T x = away_from_zero({2, 3, 4, 4}, rng);
  const T r = random_tensor(x.shape(), rng);
  c.compare(x, relu_backward(x, r), [&] { return dot(relu_forward(x), r); });
}

void check_pool(Checker& c, CounterRng& rng, PoolKind kind) {
  const PoolGeometry geom{kind, kind == PoolKind::Max ? std::size_t{3} : std::size_t{5}, 2};
  const std::size_t side = geom.window + rng.below(4);
  T x = distinct_tensor({1 + rng.below(2), 1 + rng.below(2), side, side + rng.below(2)}, rng);
  const PoolResult<double> fwd = pool_forward(x, geom);
  const T r = random_tensor(fwd.output.shape(), rng);
  c.compare(x, pool_backward(x.shape(), geom, fwd.argmax, r),
            [&] { return dot(pool_forward(x, geom).output, r); });
}

void check_concat(Checker& c, CounterRng& rng) {
  const std::size_t n = 1 + rng.below(2), h = 1 + rng.below(3), w = 1 + rng.below(3);
  const std::size_t ca = 1 + rng.below(3), cb = 1 + rng.below(3);
  T a = random_tensor({n, ca, h, w}, rng);
  T b = random_tensor({n, cb, h, w}, rng);
  const T r = random_tensor({n, ca + cb, h, w}, rng);
  auto [ga, gb] = depth_split(r, ca);
  auto loss = [&] { return dot(depth_concat(a, b), r); };
  c.compare(a, ga, loss);
  c.compare(b, gb, loss);
}

void check_dropout(Checker& c, CounterRng& rng) {
  T x = random_tensor({3, 7}, rng);
  const std::uint64_t seed = rng.next();
  const T r = random_tensor(x.shape(), rng);
  const DropoutResult<double> fwd = dropout_forward(x, 0.4, Phase::Train, seed);
  c.compare(x, dropout_backward(r, fwd.keep, 0.4),
            [&] { return dot(dropout_forward(x, 0.4, Phase::Train, seed).output, r); });
}

void check_lstm(Checker& c, CounterRng& rng) {
  const std::size_t n = 1 + rng.below(2), steps = 3, f = 2 + rng.below(3), hid = 2 + rng.below(3);
  T seq = random_tensor({n, steps, f}, rng);
  LstmParams<double> p;
  p.input_weights = random_tensor({4 * hid, f}, rng, -0.5, 0.5);
  p.recurrent_weights = random_tensor({4 * hid, hid}, rng, -0.5, 0.5);
  p.bias = random_tensor({4 * hid}, rng, -0.5, 0.5);
  const T r = random_tensor({n, hid}, rng);
  auto loss = [&] { return dot(lstm_forward(seq, p), r); };
  LstmCache<double> cache;
  lstm_forward(seq, p, &cache);
  LstmGrads<double> g = lstm_backward(seq, p, cache, r);
  c.compare(seq, g.input, loss);
  c.compare(p.input_weights, g.input_weights, loss);
  c.compare(p.recurrent_weights, g.recurrent_weights, loss);
  c.compare(p.bias, g.bias, loss);
}

void check_fc(Checker& c, CounterRng& rng) {
  const std::size_t n = 1 + rng.below(3), fin = 1 + rng.below(5), fout = 1 + rng.below(4);
  T x = random_tensor({n, fin}, rng);
  T wt = random_tensor({fout, fin}, rng);
  T b = random_tensor({fout}, rng);
  const T r = random_tensor({n, fout}, rng);
  auto loss = [&] { return dot(fully_connected_forward(x, wt, b), r); };
  LinearGrads<double> g = fully_connected_backward(x, wt, r);
  c.compare(x, g.input, loss);
  c.compare(wt, g.weights, loss);
  c.compare(b, g.bias, loss);
}

void check_softmax(Checker& c, CounterRng& rng) {
  const std::size_t n = 1 + rng.below(4);
  T logits = random_tensor({n, 2}, rng, -3.0, 3.0);
  std::vector<int> labels(n);
  for (int& l : labels) l = static_cast<int>(rng.below(2));
  const T y = one_hot<double>(labels);
  const SoftmaxXentResult<double> fwd = softmax_xent_forward(logits, y);
  c.compare(logits, softmax_xent_backward(fwd.probabilities, y),
            [&] { return static_cast<double>(softmax_xent_forward(logits, y).loss); });
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

std::vector<std::string> gradcheck_layers() {
  return {"conv2d", "batchnorm", "relu", "maxpool", "avgpool", "depth_concat",
          "dropout", "lstm", "fully_connected", "softmax_xent"};
}

GradCheckResult run_gradient_check(const std::string& layer, const GradCheckOptions& options) {
  std::function<void(Checker&, CounterRng&)> body;
  if (layer == "conv2d") body = check_conv;
  else if (layer == "batchnorm") body = check_batchnorm;
  else if (layer == "relu") body = check_relu;
  else if (layer == "maxpool") body = [](Checker& c, CounterRng& r) { check_pool(c, r, PoolKind::Max); };
  else if (layer == "avgpool") body = [](Checker& c, CounterRng& r) { check_pool(c, r, PoolKind::Avg); };
  else if (layer == "depth_concat") body = check_concat;
  else if (layer == "dropout") body = check_dropout;
  else if (layer == "lstm") body = check_lstm;
  else if (layer == "fully_connected") body = check_fc;
  else if (layer == "softmax_xent") body = check_softmax;
  else throw ConfigError("unknown gradient-check layer '" + layer + "'");

  GradCheckResult result;
  result.layer = layer;
  Checker checker{options};
  for (int i = 0; i < options.instances; ++i) {
    checker.corrupt = options.inject_fault == layer;
    std::uint64_t key = options.seed;
    for (char ch : layer) key = mix64(key + static_cast<unsigned char>(ch));
    CounterRng rng(CounterRng::derive(key, {static_cast<std::uint64_t>(i)}));
    body(checker, rng);
    ++result.instances;
  }
  result.max_relative_error = checker.worst;
  result.passed = std::isfinite(checker.worst) && checker.worst < options.tolerance;
  return result;
}

std::vector<GradCheckResult> run_gradient_checks(const GradCheckOptions& options) {
  std::vector<GradCheckResult> results;
  for (const std::string& layer : gradcheck_layers()) results.push_back(run_gradient_check(layer, options));
  return results;
}

}  // namespace blastlime::nn
