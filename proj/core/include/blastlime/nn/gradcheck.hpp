#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace blastlime::nn {

/// Central finite-difference verification of every layer's backward pass,
/// run on the double-precision instantiation of the kernels.
struct GradCheckOptions {
  int instances = 5;
  double tolerance = 1e-4;
  double step = 1e-5;
  std::uint64_t seed = 20240917;
  /// Test hook: perturbs the analytic gradient of the named layer so the
  /// harness can prove it detects a broken backward pass.
  std::string inject_fault;
};

struct GradCheckResult {
  std::string layer;
  int instances = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

/// Layers: conv2d, batchnorm, relu, maxpool, avgpool, depth_concat, dropout,
/// lstm, fully_connected, softmax_xent.
std::vector<std::string> gradcheck_layers();

std::vector<GradCheckResult> run_gradient_checks(const GradCheckOptions& options = {});
GradCheckResult run_gradient_check(const std::string& layer, const GradCheckOptions& options = {});

/// |a - n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

}  // namespace blastlime::nn
