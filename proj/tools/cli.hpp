#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tabreason::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 2,  // bad config, flags, or input files
  kClientError = 3,  // a model endpoint failed after retries
  kPostcondition = 4,
};

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// The config-defaults block appended to `--help`.
std::string defaults_help();

}  // namespace tabreason::cli
