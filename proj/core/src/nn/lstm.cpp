#include "blastlime/nn/lstm.hpp"

#include <Eigen/Core>

#include <cmath>

namespace blastlime::nn {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

template <typename T>
void check_params(const Tensor<T>& sequence, const LstmParams<T>& p) {
  if (sequence.rank() != 3) throw ShapeError("lstm: sequence must be N x T x F, got " + shape_string(sequence.shape()));
  if (p.recurrent_weights.rank() != 2 || p.input_weights.rank() != 2) throw ShapeError("lstm: weights must be rank 2");
  const std::size_t h = p.recurrent_weights.dim(1);
  if (p.recurrent_weights.dim(0) != 4 * h || p.input_weights.dim(0) != 4 * h || p.bias.size() != 4 * h) {
    throw ShapeError("lstm: gate blocks must have 4H rows");
  }
  if (p.input_weights.dim(1) != sequence.dim(2)) {
    throw ShapeError("lstm: feature width " + std::to_string(sequence.dim(2)) + " does not match input weights " +
                     shape_string(p.input_weights.shape()));
  }
  if (sequence.dim(1) == 0) throw ShapeError("lstm: sequence must have at least one step");
}

}  // namespace

template <typename T>
Tensor<T> lstm_forward(const Tensor<T>& sequence, const LstmParams<T>& params, LstmCache<T>* cache) {
  check_params(sequence, params);
  const std::size_t n = sequence.dim(0), steps = sequence.dim(1), f = sequence.dim(2);
  const std::size_t h = params.hidden();
  const auto ni = static_cast<Eigen::Index>(n);
  const auto hi = static_cast<Eigen::Index>(h);

  ConstMatMap<T> wx(params.input_weights.ptr(), 4 * hi, static_cast<Eigen::Index>(f));
  ConstMatMap<T> wh(params.recurrent_weights.ptr(), 4 * hi, hi);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(params.bias.ptr(), 4 * hi);

  RowMatrix<T> hprev = RowMatrix<T>::Zero(ni, hi);
  RowMatrix<T> cprev = RowMatrix<T>::Zero(ni, hi);
  RowMatrix<T> x(ni, static_cast<Eigen::Index>(f));
  RowMatrix<T> a(ni, 4 * hi);
  if (cache != nullptr) {
    cache->batch = n;
    cache->steps = steps;
    cache->gates.assign(steps * n * 4 * h, T{0});
    cache->cells.assign(steps * n * h, T{0});
    cache->hidden.assign(steps * n * h, T{0});
  }

  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sequence[(i * steps + t) * f + j];
      }
    }
    a.noalias() = x * wx.transpose();
    a.noalias() += hprev * wh.transpose();
    a.rowwise() += bias;
    for (Eigen::Index i = 0; i < ni; ++i) {
      for (Eigen::Index k = 0; k < hi; ++k) {
        const T ig = sigmoid(a(i, k));
        const T fg = sigmoid(a(i, hi + k));
        const T gg = std::tanh(a(i, 2 * hi + k));
        const T og = sigmoid(a(i, 3 * hi + k));
        const T c = fg * cprev(i, k) + ig * gg;
        a(i, k) = ig;
        a(i, hi + k) = fg;
        a(i, 2 * hi + k) = gg;
        a(i, 3 * hi + k) = og;
        cprev(i, k) = c;
        hprev(i, k) = og * std::tanh(c);
      }
    }
    if (cache != nullptr) {
      std::copy_n(a.data(), n * 4 * h, cache->gates.data() + t * n * 4 * h);
      std::copy_n(cprev.data(), n * h, cache->cells.data() + t * n * h);
      std::copy_n(hprev.data(), n * h, cache->hidden.data() + t * n * h);
    }
  }
  Tensor<T> out({n, h});
  std::copy_n(hprev.data(), n * h, out.ptr());
  return out;
}

template <typename T>
LstmGrads<T> lstm_backward(const Tensor<T>& sequence, const LstmParams<T>& params, const LstmCache<T>& cache,
                           const Tensor<T>& grad_hidden) {
  check_params(sequence, params);
  const std::size_t n = sequence.dim(0), steps = sequence.dim(1), f = sequence.dim(2);
  const std::size_t h = params.hidden();
  if (cache.batch != n || cache.steps != steps) throw ShapeError("lstm backward: cache does not match sequence");
  if (grad_hidden.shape() != Shape({n, h})) throw ShapeError("lstm backward: gradient must be N x H");
  const auto ni = static_cast<Eigen::Index>(n);
  const auto hi = static_cast<Eigen::Index>(h);
  const auto fi = static_cast<Eigen::Index>(f);

  LstmGrads<T> g{Tensor<T>(sequence.shape()), Tensor<T>(params.input_weights.shape()),
                 Tensor<T>(params.recurrent_weights.shape()), Tensor<T>(params.bias.shape())};
  ConstMatMap<T> wx(params.input_weights.ptr(), 4 * hi, fi);
  ConstMatMap<T> wh(params.recurrent_weights.ptr(), 4 * hi, hi);
  MatMap<T> dwx(g.input_weights.ptr(), 4 * hi, fi);
  MatMap<T> dwh(g.recurrent_weights.ptr(), 4 * hi, hi);

  RowMatrix<T> dh = ConstMatMap<T>(grad_hidden.ptr(), ni, hi);
  RowMatrix<T> dc = RowMatrix<T>::Zero(ni, hi);
  RowMatrix<T> da(ni, 4 * hi);
  RowMatrix<T> x(ni, fi);
  RowMatrix<T> hprev(ni, hi);
  RowMatrix<T> dx(ni, fi);

  for (std::size_t step = steps; step-- > 0;) {
    ConstMatMap<T> gates(cache.gates.data() + step * n * 4 * h, ni, 4 * hi);
    ConstMatMap<T> cells(cache.cells.data() + step * n * h, ni, hi);
    for (Eigen::Index i = 0; i < ni; ++i) {
      for (Eigen::Index k = 0; k < hi; ++k) {
        const T ig = gates(i, k);
        const T fg = gates(i, hi + k);
        const T gg = gates(i, 2 * hi + k);
        const T og = gates(i, 3 * hi + k);
        const T tc = std::tanh(cells(i, k));
        const T c_before = step > 0 ? cache.cells[((step - 1) * n + static_cast<std::size_t>(i)) * h +
                                                  static_cast<std::size_t>(k)]
                                    : T{0};
        const T dct = dc(i, k) + dh(i, k) * og * (T{1} - tc * tc);
        da(i, k) = dct * gg * ig * (T{1} - ig);
        da(i, hi + k) = dct * c_before * fg * (T{1} - fg);
        da(i, 2 * hi + k) = dct * ig * (T{1} - gg * gg);
        da(i, 3 * hi + k) = dh(i, k) * tc * og * (T{1} - og);
        dc(i, k) = dct * fg;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sequence[(i * steps + step) * f + j];
      }
    }
    if (step > 0) {
      hprev = ConstMatMap<T>(cache.hidden.data() + (step - 1) * n * h, ni, hi);
    } else {
      hprev.setZero();
    }
    dwx.noalias() += da.transpose() * x;
    dwh.noalias() += da.transpose() * hprev;
    for (Eigen::Index k = 0; k < 4 * hi; ++k) g.bias[static_cast<std::size_t>(k)] += da.col(k).sum();
    dx.noalias() = da * wx;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        g.input[(i * steps + step) * f + j] = dx(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
    }
    dh.noalias() = da * wh;
  }
  return g;
}

template Tensor<float> lstm_forward<float>(const Tensor<float>&, const LstmParams<float>&, LstmCache<float>*);
template Tensor<double> lstm_forward<double>(const Tensor<double>&, const LstmParams<double>&, LstmCache<double>*);
template LstmGrads<float> lstm_backward<float>(const Tensor<float>&, const LstmParams<float>&, const LstmCache<float>&,
                                               const Tensor<float>&);
template LstmGrads<double> lstm_backward<double>(const Tensor<double>&, const LstmParams<double>&,
                                                 const LstmCache<double>&, const Tensor<double>&);

}  // namespace blastlime::nn
