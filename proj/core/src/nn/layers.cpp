#include "blastlime/nn/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "blastlime/rng.hpp"

namespace blastlime::nn {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void require_rank(const Shape& s, std::size_t rank, const char* who) {
  require(s.size() == rank, std::string(who) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_string(s));
}

// Rows of `cols` are (channel, ky, kx); columns are the output pixels of rows [y0, y1).
template <typename T>
void im2col3x3(const T* input, std::size_t channels, std::size_t height, std::size_t width,
               std::size_t y0, std::size_t y1, std::vector<T>& cols) {
  const std::size_t hw = height * width;
  const std::size_t band = (y1 - y0) * width;
  if (cols.size() < channels * 9 * band) cols.resize(channels * 9 * band);
  T* dst = cols.data();
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = input + c * hw;
    for (int ky = -1; ky <= 1; ++ky) {
      for (int kx = -1; kx <= 1; ++kx) {
        for (std::size_t y = y0; y < y1; ++y) {
          T* row = dst + (y - y0) * width;
          const auto sy = static_cast<std::ptrdiff_t>(y) + ky;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(row, row + width, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * width;
          if (kx == 0) {
            std::copy(src, src + width, row);
          } else if (kx < 0) {
            row[0] = T{0};
            std::copy(src, src + width - 1, row + 1);
          } else {
            std::copy(src + 1, src + width, row);
            row[width - 1] = T{0};
          }
        }
        dst += band;
      }
    }
  }
}

template <typename T>
void col2im3x3_add(const std::vector<T>& cols, std::size_t channels, std::size_t height,
                   std::size_t width, std::size_t y0, std::size_t y1, T* grad_input) {
  const std::size_t hw = height * width;
  const std::size_t band = (y1 - y0) * width;
  const T* src = cols.data();
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = grad_input + c * hw;
    for (int ky = -1; ky <= 1; ++ky) {
      for (int kx = -1; kx <= 1; ++kx) {
        for (std::size_t y = y0; y < y1; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y) + ky;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) continue;
          const T* row = src + (y - y0) * width;
          T* out = plane + static_cast<std::size_t>(sy) * width;
          if (kx == 0) {
            for (std::size_t x = 0; x < width; ++x) out[x] += row[x];
          } else if (kx < 0) {
            for (std::size_t x = 1; x < width; ++x) out[x - 1] += row[x];
          } else {
            for (std::size_t x = 0; x + 1 < width; ++x) out[x + 1] += row[x];
          }
        }
        src += band;
      }
    }
  }
}

// Rows per band so one band of columns stays around 2 MB.
template <typename T>
std::size_t band_rows(std::size_t in_channels, std::size_t width) {
  constexpr std::size_t budget = (std::size_t{2} << 20) / sizeof(T);
  return std::max<std::size_t>(1, budget / (in_channels * 9 * std::max<std::size_t>(width, 1)));
}

template <typename T>
void check_conv_shapes(const Shape& in, const Tensor<T>& weights, const Tensor<T>& bias) {
  require_rank(in, 4, "conv2d input");
  require_rank(weights.shape(), 4, "conv2d weights");
  require(weights.dim(2) == 3 && weights.dim(3) == 3, "conv2d: kernel must be 3x3");
  require(weights.dim(1) == in[1], "conv2d: channel mismatch, input has " + std::to_string(in[1]) +
                                       " channels, weights expect " + std::to_string(weights.dim(1)));
  require(bias.size() == weights.dim(0), "conv2d: bias length must equal output channels");
}

}  // namespace

template <typename T>
void conv3x3_image_forward(const T* input, std::size_t in_channels, std::size_t height,
                           std::size_t width, const Tensor<T>& weights, const Tensor<T>& bias,
                           T* output, std::vector<T>& cols) {
  const auto oc = static_cast<Eigen::Index>(weights.dim(0));
  const auto k = static_cast<Eigen::Index>(in_channels * 9);
  const auto hw = static_cast<Eigen::Index>(height * width);
  ConstMatMap<T> w(weights.ptr(), oc, k);
  MatMap<T> out(output, oc, hw);
  const std::size_t rows = band_rows<T>(in_channels, width);
  for (std::size_t y0 = 0; y0 < height; y0 += rows) {
    const std::size_t y1 = std::min(height, y0 + rows);
    const auto n = static_cast<Eigen::Index>((y1 - y0) * width);
    im2col3x3(input, in_channels, height, width, y0, y1, cols);
    ConstMatMap<T> c(cols.data(), k, n);
    out.middleCols(static_cast<Eigen::Index>(y0 * width), n).noalias() = w * c;
  }
  for (Eigen::Index o = 0; o < oc; ++o) out.row(o).array() += bias[static_cast<std::size_t>(o)];
}

template <typename T>
void conv3x3_image_backward(const T* input, std::size_t in_channels, std::size_t height,
                            std::size_t width, const Tensor<T>& weights, const T* grad_output,
                            T* grad_input, Tensor<T>& grad_weights, Tensor<T>& grad_bias,
                            std::vector<T>& cols) {
  const auto oc = static_cast<Eigen::Index>(weights.dim(0));
  const auto k = static_cast<Eigen::Index>(in_channels * 9);
  const auto hw = static_cast<Eigen::Index>(height * width);
  ConstMatMap<T> dout(grad_output, oc, hw);
  ConstMatMap<T> w(weights.ptr(), oc, k);
  MatMap<T> dw(grad_weights.ptr(), oc, k);
  const std::size_t rows = band_rows<T>(in_channels, width);
  for (std::size_t y0 = 0; y0 < height; y0 += rows) {
    const std::size_t y1 = std::min(height, y0 + rows);
    const auto n = static_cast<Eigen::Index>((y1 - y0) * width);
    const auto d = dout.middleCols(static_cast<Eigen::Index>(y0 * width), n);
    im2col3x3(input, in_channels, height, width, y0, y1, cols);
    {
      ConstMatMap<T> c(cols.data(), k, n);
      dw.noalias() += d * c.transpose();
    }
    if (grad_input != nullptr) {
      MatMap<T> dc(cols.data(), k, n);
      dc.noalias() = w.transpose() * d;
      col2im3x3_add(cols, in_channels, height, width, y0, y1, grad_input);
    }
  }
  // Plain loop: Eigen's vectorised sum peels by address, which would make the
  // result depend on heap layout.
  for (std::size_t o = 0; o < weights.dim(0); ++o) {
    const T* row = grad_output + o * height * width;
    T acc{0};
    for (std::size_t i = 0; i < height * width; ++i) acc += row[i];
    grad_bias[o] += acc;
  }
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  check_conv_shapes(input.shape(), weights, bias);
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oc = weights.dim(0);
  Tensor<T> out({n, oc, h, w});
  std::vector<T> cols;
  for (std::size_t i = 0; i < n; ++i) {
    conv3x3_image_forward(input.ptr() + i * c * h * w, c, h, w, weights, bias, out.ptr() + i * oc * h * w, cols);
  }
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_output) {
  Tensor<T> dummy_bias({weights.dim(0)});
  check_conv_shapes(input.shape(), weights, dummy_bias);
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oc = weights.dim(0);
  require(grad_output.shape() == Shape({n, oc, h, w}), "conv2d backward: gradient shape mismatch");
  Conv2dGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(weights.shape()), Tensor<T>({oc})};
  std::vector<T> cols;
  for (std::size_t i = 0; i < n; ++i) {
    conv3x3_image_backward(input.ptr() + i * c * h * w, c, h, w, weights, grad_output.ptr() + i * oc * h * w,
                           g.input.ptr() + i * c * h * w, g.weights, g.bias, cols);
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
BatchNormParams<T> BatchNormParams<T>::identity(std::size_t channels) {
  return {Tensor<T>({channels}, T{1}), Tensor<T>({channels}, T{0}), Tensor<T>({channels}, T{0}),
          Tensor<T>({channels}, T{1}), false};
}

namespace {

template <typename T>
void check_bn(const Tensor<T>& input, const BatchNormParams<T>& p) {
  require_rank(input.shape(), 4, "batchnorm input");
  const std::size_t c = input.dim(1);
  require(p.scale.size() == c && p.offset.size() == c && p.running_mean.size() == c && p.running_var.size() == c,
          "batchnorm: parameter channel count does not match input channels " + std::to_string(c));
}

}  // namespace

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, BatchNormParams<T>& params, Phase phase,
                            BatchNormCache<T>* cache) {
  if (phase == Phase::Inference) return batchnorm_inference(input, params);
  check_bn(input, params);
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  const std::size_t m = n * hw;
  Tensor<T> out(input.shape());
  std::vector<T> mean(c), inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = input.ptr() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) sum += p[j];
    }
    const double mu = sum / static_cast<double>(m);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = input.ptr() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) sq += (p[j] - mu) * (p[j] - mu);
    }
    const double var = sq / static_cast<double>(m);
    const double istd = 1.0 / std::sqrt(var + kBatchNormEpsilon);
    mean[ch] = static_cast<T>(mu);
    inv_std[ch] = static_cast<T>(istd);
    const T a = static_cast<T>(params.scale[ch] * istd);
    const T b = static_cast<T>(params.offset[ch] - params.scale[ch] * mu * istd);
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = input.ptr() + (i * c + ch) * hw;
      T* q = out.ptr() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) q[j] = a * p[j] + b;
    }
    const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
    params.running_mean[ch] = static_cast<T>((1 - kBatchNormMomentum) * params.running_mean[ch] + kBatchNormMomentum * mu);
    params.running_var[ch] = static_cast<T>((1 - kBatchNormMomentum) * params.running_var[ch] + kBatchNormMomentum * unbiased);
  }
  params.has_statistics = true;
  if (cache != nullptr) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm_inference(const Tensor<T>& input, const BatchNormParams<T>& params) {
  check_bn(input, params);
  if (!params.has_statistics) throw StateError("batchnorm inference requested before any training step");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  Tensor<T> out(input.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double istd = 1.0 / std::sqrt(static_cast<double>(params.running_var[ch]) + kBatchNormEpsilon);
    const T a = static_cast<T>(params.scale[ch] * istd);
    const T b = static_cast<T>(params.offset[ch] - params.scale[ch] * params.running_mean[ch] * istd);
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = input.ptr() + (i * c + ch) * hw;
      T* q = out.ptr() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) q[j] = a * p[j] + b;
    }
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& input, const BatchNormParams<T>& params,
                                     const BatchNormCache<T>& cache, const Tensor<T>& grad_output) {
  check_bn(input, params);
  require(grad_output.shape() == input.shape(), "batchnorm backward: gradient shape mismatch");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  const double m = static_cast<double>(n * hw);
  BatchNormGrads<T> g{Tensor<T>(input.shape()), Tensor<T>({c}), Tensor<T>({c})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mu = cache.mean[ch];
    const double istd = cache.inv_std[ch];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* x = input.ptr() + (i * c + ch) * hw;
      const T* dy = grad_output.ptr() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        sum_dy += dy[j];
        sum_dy_xhat += dy[j] * (x[j] - mu) * istd;
      }
    }
    g.offset[ch] = static_cast<T>(sum_dy);
    g.scale[ch] = static_cast<T>(sum_dy_xhat);
    const double k = params.scale[ch] * istd;
    for (std::size_t i = 0; i < n; ++i) {
      const T* x = input.ptr() + (i * c + ch) * hw;
      const T* dy = grad_output.ptr() + (i * c + ch) * hw;
      T* dx = g.input.ptr() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        const double xhat = (x[j] - mu) * istd;
        dx[j] = static_cast<T>(k * (dy[j] - sum_dy / m - xhat * sum_dy_xhat / m));
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? input[i] : T{0};
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_output) {
  require(input.shape() == grad_output.shape(), "relu backward: gradient shape mismatch");
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? grad_output[i] : T{0};
  return out;
}

// ---------------------------------------------------------------------------

std::size_t PoolGeometry::output_extent(std::size_t in) const {
  if (in < window) {
    throw ShapeError("pool: input extent " + std::to_string(in) + " smaller than window " + std::to_string(window));
  }
  return (in - window) / stride + 1;
}

template <typename T>
PoolResult<T> pool_forward(const Tensor<T>& input, const PoolGeometry& g) {
  require_rank(input.shape(), 4, "pool input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = g.output_extent(h), ow = g.output_extent(w);
  PoolResult<T> r{Tensor<T>({n, c, oh, ow}), {}};
  if (g.kind == PoolKind::Max) r.argmax.resize(r.output.size());
  const T inv_area = T{1} / static_cast<T>(g.window * g.window);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = input.ptr() + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t o = (plane * oh + oy) * ow + ox;
        if (g.kind == PoolKind::Max) {
          std::size_t best = oy * g.stride * w + ox * g.stride;
          T best_v = src[best];
          for (std::size_t ky = 0; ky < g.window; ++ky) {
            for (std::size_t kx = 0; kx < g.window; ++kx) {
              const std::size_t idx = (oy * g.stride + ky) * w + ox * g.stride + kx;
              if (src[idx] > best_v) {
                best_v = src[idx];
                best = idx;
              }
            }
          }
          r.output[o] = best_v;
          r.argmax[o] = static_cast<std::uint32_t>(plane * h * w + best);
        } else {
          T sum{0};
          for (std::size_t ky = 0; ky < g.window; ++ky) {
            const T* row = src + (oy * g.stride + ky) * w + ox * g.stride;
            for (std::size_t kx = 0; kx < g.window; ++kx) sum += row[kx];
          }
          r.output[o] = sum * inv_area;
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> pool_backward(const Shape& input_shape, const PoolGeometry& g, std::span<const std::uint32_t> argmax,
                        const Tensor<T>& grad_output) {
  require_rank(input_shape, 4, "pool backward input");
  const std::size_t n = input_shape[0], c = input_shape[1], h = input_shape[2], w = input_shape[3];
  const std::size_t oh = g.output_extent(h), ow = g.output_extent(w);
  require(grad_output.shape() == Shape({n, c, oh, ow}), "pool backward: gradient shape mismatch");
  Tensor<T> din(input_shape);
  if (g.kind == PoolKind::Max) {
    require(argmax.size() == grad_output.size(), "pool backward: argmax size mismatch");
    for (std::size_t o = 0; o < grad_output.size(); ++o) din[argmax[o]] += grad_output[o];
    return din;
  }
  const T inv_area = T{1} / static_cast<T>(g.window * g.window);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    T* dst = din.ptr() + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T share = grad_output[(plane * oh + oy) * ow + ox] * inv_area;
        for (std::size_t ky = 0; ky < g.window; ++ky) {
          T* row = dst + (oy * g.stride + ky) * w + ox * g.stride;
          for (std::size_t kx = 0; kx < g.window; ++kx) row[kx] += share;
        }
      }
    }
  }
  return din;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> depth_concat(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 4, "depth_concat a");
  require_rank(b.shape(), 4, "depth_concat b");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "depth_concat: N/H/W mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<T> out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.ptr() + i * ca * hw, ca * hw, out.ptr() + i * (ca + cb) * hw);
    std::copy_n(b.ptr() + i * cb * hw, cb * hw, out.ptr() + i * (ca + cb) * hw + ca * hw);
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> depth_split(const Tensor<T>& grad, std::size_t channels_a) {
  require_rank(grad.shape(), 4, "depth_split");
  require(channels_a <= grad.dim(1), "depth_split: split point beyond channel count");
  const std::size_t n = grad.dim(0), c = grad.dim(1), hw = grad.dim(2) * grad.dim(3);
  const std::size_t cb = c - channels_a;
  Tensor<T> a({n, channels_a, grad.dim(2), grad.dim(3)});
  Tensor<T> b({n, cb, grad.dim(2), grad.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(grad.ptr() + i * c * hw, channels_a * hw, a.ptr() + i * channels_a * hw);
    std::copy_n(grad.ptr() + i * c * hw + channels_a * hw, cb * hw, b.ptr() + i * cb * hw);
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------

template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double rate, Phase phase, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  if (phase == Phase::Inference || rate == 0.0) return {input, {}};
  DropoutResult<T> r{Tensor<T>(input.shape()), std::vector<std::uint8_t>(input.size())};
  CounterRng rng(seed);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < input.size(); ++i) {
    r.keep[i] = rng.uniform() >= rate ? 1 : 0;
    r.output[i] = r.keep[i] ? input[i] * scale : T{0};
  }
  return r;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_output, std::span<const std::uint8_t> keep, double rate) {
  if (keep.empty()) return grad_output;
  require(keep.size() == grad_output.size(), "dropout backward: mask size mismatch");
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> out(grad_output.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep[i] ? grad_output[i] * scale : T{0};
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> fully_connected_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  require_rank(input.shape(), 2, "fully_connected input");
  require_rank(weights.shape(), 2, "fully_connected weights");
  require(weights.dim(1) == input.dim(1), "fully_connected: input width " + std::to_string(input.dim(1)) +
                                              " does not match weights " + shape_string(weights.shape()));
  require(bias.size() == weights.dim(0), "fully_connected: bias length mismatch");
  const auto n = static_cast<Eigen::Index>(input.dim(0));
  const auto fi = static_cast<Eigen::Index>(input.dim(1));
  const auto fo = static_cast<Eigen::Index>(weights.dim(0));
  Tensor<T> out({input.dim(0), weights.dim(0)});
  ConstMatMap<T> x(input.ptr(), n, fi);
  ConstMatMap<T> w(weights.ptr(), fo, fi);
  MatMap<T> y(out.ptr(), n, fo);
  y.noalias() = x * w.transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index o = 0; o < fo; ++o) y(i, o) += bias[static_cast<std::size_t>(o)];
  }
  return out;
}

template <typename T>
LinearGrads<T> fully_connected_backward(const Tensor<T>& input, const Tensor<T>& weights,
                                        const Tensor<T>& grad_output) {
  require(grad_output.shape() == Shape({input.dim(0), weights.dim(0)}),
          "fully_connected backward: gradient shape mismatch");
  const auto n = static_cast<Eigen::Index>(input.dim(0));
  const auto fi = static_cast<Eigen::Index>(input.dim(1));
  const auto fo = static_cast<Eigen::Index>(weights.dim(0));
  LinearGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(weights.shape()), Tensor<T>({weights.dim(0)})};
  ConstMatMap<T> x(input.ptr(), n, fi);
  ConstMatMap<T> w(weights.ptr(), fo, fi);
  ConstMatMap<T> dy(grad_output.ptr(), n, fo);
  MatMap<T>(g.input.ptr(), n, fi).noalias() = dy * w;
  MatMap<T>(g.weights.ptr(), fo, fi).noalias() = dy.transpose() * x;
  for (Eigen::Index o = 0; o < fo; ++o) g.bias[static_cast<std::size_t>(o)] = dy.col(o).sum();
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
SoftmaxXentResult<T> softmax_xent_forward(const Tensor<T>& logits, const Tensor<T>& labels) {
  require_rank(logits.shape(), 2, "softmax_xent logits");
  require(logits.dim(1) == 2, "softmax_xent: exactly 2 classes required");
  require(labels.shape() == logits.shape(), "softmax_xent: label shape mismatch");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  require(n > 0, "softmax_xent: empty batch");
  SoftmaxXentResult<T> r{Tensor<T>(logits.shape()), T{0}};
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.ptr() + i * k;
    const T* y = labels.ptr() + i * k;
    std::size_t hot = k;
    T sum_y{0};
    for (std::size_t j = 0; j < k; ++j) {
      if (y[j] != T{0} && y[j] != T{1}) throw ConfigError("softmax_xent: label row is not one-hot");
      sum_y += y[j];
      if (y[j] == T{1}) hot = j;
    }
    if (sum_y != T{1}) throw ConfigError("softmax_xent: label row is not one-hot");
    const T m = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[j] - m));
    for (std::size_t j = 0; j < k; ++j) {
      r.probabilities[i * k + j] = static_cast<T>(std::exp(static_cast<double>(z[j] - m)) / denom);
    }
    total += -(static_cast<double>(z[hot] - m) - std::log(denom));
  }
  r.loss = static_cast<T>(total / static_cast<double>(n));
  return r;
}

template <typename T>
Tensor<T> softmax_xent_backward(const Tensor<T>& probabilities, const Tensor<T>& labels) {
  require(probabilities.shape() == labels.shape(), "softmax_xent backward: shape mismatch");
  const T inv_n = T{1} / static_cast<T>(probabilities.dim(0));
  Tensor<T> g(probabilities.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (probabilities[i] - labels[i]) * inv_n;
  return g;
}

template <typename T>
Tensor<T> one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor<T> t({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) throw ConfigError("label index out of range");
    t[i * classes + static_cast<std::size_t>(labels[i])] = T{1};
  }
  return t;
}

#define BLASTLIME_INSTANTIATE_LAYERS(T)                                                                     \
  template void conv3x3_image_forward<T>(const T*, std::size_t, std::size_t, std::size_t, const Tensor<T>&, \
                                         const Tensor<T>&, T*, std::vector<T>&);                            \
  template void conv3x3_image_backward<T>(const T*, std::size_t, std::size_t, std::size_t,                 \
                                          const Tensor<T>&, const T*, T*, Tensor<T>&, Tensor<T>&,          \
                                          std::vector<T>&);                                                 \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Conv2dGrads<T> conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template struct BatchNormParams<T>;                                                                       \
  template Tensor<T> batchnorm_forward<T>(const Tensor<T>&, BatchNormParams<T>&, Phase, BatchNormCache<T>*); \
  template Tensor<T> batchnorm_inference<T>(const Tensor<T>&, const BatchNormParams<T>&);                   \
  template BatchNormGrads<T> batchnorm_backward<T>(const Tensor<T>&, const BatchNormParams<T>&,             \
                                                   const BatchNormCache<T>&, const Tensor<T>&);             \
  template Tensor<T> relu_forward<T>(const Tensor<T>&);                                                     \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template PoolResult<T> pool_forward<T>(const Tensor<T>&, const PoolGeometry&);                            \
  template Tensor<T> pool_backward<T>(const Shape&, const PoolGeometry&, std::span<const std::uint32_t>,    \
                                      const Tensor<T>&);                                                    \
  template Tensor<T> depth_concat<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template std::pair<Tensor<T>, Tensor<T>> depth_split<T>(const Tensor<T>&, std::size_t);                   \
  template DropoutResult<T> dropout_forward<T>(const Tensor<T>&, double, Phase, std::uint64_t);             \
  template Tensor<T> dropout_backward<T>(const Tensor<T>&, std::span<const std::uint8_t>, double);          \
  template Tensor<T> fully_connected_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template LinearGrads<T> fully_connected_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template SoftmaxXentResult<T> softmax_xent_forward<T>(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> softmax_xent_backward<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> one_hot<T>(std::span<const int>, std::size_t);

BLASTLIME_INSTANTIATE_LAYERS(float)
BLASTLIME_INSTANTIATE_LAYERS(double)

#undef BLASTLIME_INSTANTIATE_LAYERS

}  // namespace blastlime::nn
