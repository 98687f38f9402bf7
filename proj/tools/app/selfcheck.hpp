#pragma once

#include <string>
#include <vector>

namespace blastlime::cli {

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelfcheckOptions {
  /// Layer whose analytic gradient is deliberately corrupted.
  std::string inject_fault;
};

/// Gradient checks for every layer, the LIME oracle suite and the metric
/// oracle suite.
std::vector<CheckOutcome> run_selfcheck(const SelfcheckOptions& options = {});

}  // namespace blastlime::cli
