#include "blastlime/nn/tensor.hpp"

#include <cmath>

namespace blastlime::nn {

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);

}  // namespace blastlime::nn
