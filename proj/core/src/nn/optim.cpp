#include "blastlime/nn/optim.hpp"

#include <cmath>

namespace blastlime::nn {

template <typename T>
void adam_step(std::span<const ParamRef<T>> params, AdamState<T>& state, double learning_rate) {
  for (const auto& p : params) {
    if (p.value == nullptr || p.grad == nullptr) throw ConfigError("adam: null parameter '" + p.name + "'");
    if (p.grad->shape() != p.value->shape()) {
      throw ShapeError("adam: gradient shape of '" + p.name + "' does not match parameter");
    }
    if (!all_finite<T>(p.grad->data())) throw TrainingError("non-finite gradient in parameter '" + p.name + "'");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value->shape());
      state.second_moment.emplace_back(p.value->shape());
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam: parameter list changed between steps");

  ++state.step;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& value = *params[k].value;
    const Tensor<T>& grad = *params[k].grad;
    Tensor<T>& m = state.first_moment[k];
    Tensor<T>& v = state.second_moment[k];
    if (m.shape() != value.shape()) throw ShapeError("adam: moment shape mismatch for '" + params[k].name + "'");
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double gi = grad[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      value[i] = static_cast<T>(value[i] - learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon));
    }
  }
}

template void adam_step<float>(std::span<const ParamRef<float>>, AdamState<float>&, double);
template void adam_step<double>(std::span<const ParamRef<double>>, AdamState<double>&, double);

double lr_schedule(double initial, int epoch, double drop_factor, int period) {
  if (epoch < 1) throw ConfigError("lr_schedule: epochs are counted from 1");
  if (period < 1) throw ConfigError("lr_schedule: period must be positive");
  return initial * std::pow(drop_factor, (epoch - 1) / period);
}

}  // namespace blastlime::nn
