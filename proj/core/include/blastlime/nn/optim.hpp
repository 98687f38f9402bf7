#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "blastlime/nn/tensor.hpp"

namespace blastlime::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// A parameter tensor paired with its gradient of identical shape.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value = nullptr;
  const Tensor<T>* grad = nullptr;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::uint64_t step = 0;
};

/// One Adam update with bias correction:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
/// Moment buffers are created on first use. Every gradient is checked before
/// anything is modified; a non-finite entry throws TrainingError naming the
/// parameter.
template <typename T>
void adam_step(std::span<const ParamRef<T>> params, AdamState<T>& state, double learning_rate);

/// Piecewise-constant schedule: initial * drop^floor((epoch - 1) / period),
/// epochs counted from 1.
double lr_schedule(double initial, int epoch, double drop_factor = 0.5, int period = 5);

}  // namespace blastlime::nn
