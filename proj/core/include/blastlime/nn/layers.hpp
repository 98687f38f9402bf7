#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "blastlime/nn/tensor.hpp"

namespace blastlime::nn {

enum class Phase { Train, Inference };

// ---------------------------------------------------------------------------
// Convolution: 3x3 kernels, stride 1, zero padding 1 ("same"), NCHW.

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

/// input N x Cin x H x W, weights Cout x Cin x 3 x 3, bias Cout.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias);

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                               const Tensor<T>& grad_output);

/// Single-image building blocks shared by the batch kernels and the network's
/// memory-lean training path. `cols` is scratch space resized as needed.
template <typename T>
void conv3x3_image_forward(const T* input, std::size_t in_channels, std::size_t height,
                           std::size_t width, const Tensor<T>& weights, const Tensor<T>& bias,
                           T* output, std::vector<T>& cols);

/// Accumulates into grad_weights / grad_bias; writes grad_input when non-null.
template <typename T>
void conv3x3_image_backward(const T* input, std::size_t in_channels, std::size_t height,
                            std::size_t width, const Tensor<T>& weights, const T* grad_output,
                            T* grad_input, Tensor<T>& grad_weights, Tensor<T>& grad_bias,
                            std::vector<T>& cols);

// ---------------------------------------------------------------------------
// Batch normalisation over N x H x W per channel.

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
struct BatchNormParams {
  Tensor<T> scale;
  Tensor<T> offset;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  /// False until the first training-mode pass; inference requires it.
  bool has_statistics = false;

  static BatchNormParams identity(std::size_t channels);
};

template <typename T>
struct BatchNormCache {
  std::vector<T> mean;
  std::vector<T> inv_std;
};

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> scale;
  Tensor<T> offset;
};

/// Training mode: normalises with batch statistics (biased variance), then
/// folds them into the running estimates with momentum 0.1 (running variance
/// uses the unbiased estimate).
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, BatchNormParams<T>& params, Phase phase,
                            BatchNormCache<T>* cache = nullptr);

/// Inference only; throws StateError if no statistics were ever recorded.
template <typename T>
Tensor<T> batchnorm_inference(const Tensor<T>& input, const BatchNormParams<T>& params);

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& input, const BatchNormParams<T>& params,
                                     const BatchNormCache<T>& cache, const Tensor<T>& grad_output);

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input);

/// Gradient passes where input > 0; zero elsewhere.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_output);

// ---------------------------------------------------------------------------
// Pooling without padding: out = floor((in - window) / stride) + 1.

enum class PoolKind { Max, Avg };

struct PoolGeometry {
  PoolKind kind = PoolKind::Max;
  std::size_t window = 3;
  std::size_t stride = 2;

  std::size_t output_extent(std::size_t in) const;
  friend bool operator==(const PoolGeometry&, const PoolGeometry&) = default;
};

template <typename T>
struct PoolResult {
  Tensor<T> output;
  /// Max pooling only: flat input index (within the N*C plane stack) of each
  /// output's first maximal element in row-major window order.
  std::vector<std::uint32_t> argmax;
};

template <typename T>
PoolResult<T> pool_forward(const Tensor<T>& input, const PoolGeometry& geometry);

template <typename T>
Tensor<T> pool_backward(const Shape& input_shape, const PoolGeometry& geometry,
                        std::span<const std::uint32_t> argmax, const Tensor<T>& grad_output);

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> depth_concat(const Tensor<T>& a, const Tensor<T>& b);

/// Inverse of depth_concat on gradients: splits channels at `channels_a`.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> depth_split(const Tensor<T>& grad, std::size_t channels_a);

// ---------------------------------------------------------------------------
// Inverted dropout: kept units are scaled by 1 / (1 - rate) in training.

template <typename T>
struct DropoutResult {
  Tensor<T> output;
  std::vector<std::uint8_t> keep;  // empty in inference mode
};

template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double rate, Phase phase, std::uint64_t seed);

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_output, std::span<const std::uint8_t> keep, double rate);

// ---------------------------------------------------------------------------
// Fully connected: input N x Fin, weights Fout x Fin, bias Fout.

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
Tensor<T> fully_connected_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias);

template <typename T>
LinearGrads<T> fully_connected_backward(const Tensor<T>& input, const Tensor<T>& weights,
                                        const Tensor<T>& grad_output);

// ---------------------------------------------------------------------------

template <typename T>
struct SoftmaxXentResult {
  Tensor<T> probabilities;
  T loss{};
};

/// Two-class softmax with mean cross-entropy. Labels must be one-hot rows.
template <typename T>
SoftmaxXentResult<T> softmax_xent_forward(const Tensor<T>& logits, const Tensor<T>& labels);

/// (p - y) / N
template <typename T>
Tensor<T> softmax_xent_backward(const Tensor<T>& probabilities, const Tensor<T>& labels);

template <typename T>
Tensor<T> one_hot(std::span<const int> labels, std::size_t classes = 2);

}  // namespace blastlime::nn
