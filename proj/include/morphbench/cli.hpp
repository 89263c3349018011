#pragma once

#include <string>
#include <vector>

namespace morphbench::cli {

enum ExitCode : int {
  kOk = 0,
  kPartial = 1,
  kConfigError = 2,
  kDataError = 3,
  kComputeError = 4,
};

// Arguments exclude the program name.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace morphbench::cli
