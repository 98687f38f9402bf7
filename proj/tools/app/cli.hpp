#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace blastlime::cli {

/// Exit statuses shared by every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitInputError = 2,
  kExitTrainingError = 3,
};

/// Parses `args` (without the program name) and runs the chosen subcommand.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace blastlime::cli
