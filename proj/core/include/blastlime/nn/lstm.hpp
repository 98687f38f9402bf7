#pragma once

#include <vector>

#include "blastlime/nn/tensor.hpp"

namespace blastlime::nn {

/// Gate blocks are stacked in the order input, forget, candidate, output:
/// rows [0,H) input gate, [H,2H) forget gate, [2H,3H) candidate, [3H,4H) output.
template <typename T>
struct LstmParams {
  Tensor<T> input_weights;      // 4H x F
  Tensor<T> recurrent_weights;  // 4H x H
  Tensor<T> bias;               // 4H

  std::size_t hidden() const { return recurrent_weights.dim(1); }
  std::size_t features() const { return input_weights.dim(1); }
};

/// Activations kept for backpropagation through time, laid out [t][n][...].
template <typename T>
struct LstmCache {
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::vector<T> gates;   // T x N x 4H, post-activation (i, f, g, o)
  std::vector<T> cells;   // T x N x H
  std::vector<T> hidden;  // T x N x H
};

template <typename T>
struct LstmGrads {
  Tensor<T> input;  // N x T x F
  Tensor<T> input_weights;
  Tensor<T> recurrent_weights;
  Tensor<T> bias;
};

/// sequence N x T x F with h0 = c0 = 0; returns h_T as N x H.
template <typename T>
Tensor<T> lstm_forward(const Tensor<T>& sequence, const LstmParams<T>& params, LstmCache<T>* cache = nullptr);

/// Backpropagation through all T steps given dL/dh_T (N x H).
template <typename T>
LstmGrads<T> lstm_backward(const Tensor<T>& sequence, const LstmParams<T>& params, const LstmCache<T>& cache,
                           const Tensor<T>& grad_hidden);

}  // namespace blastlime::nn
