#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ddt::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int {
  kOk = 0,
  kVerificationFailed = 1,
  kConfigError = 2,
  kIoError = 3,
};

/// Runs one command line (without the program name). Results go to `out`,
/// logs and diagnostics to `err`.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace ddt::cli
