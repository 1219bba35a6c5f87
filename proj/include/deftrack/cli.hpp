#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace deftrack {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitInit = 3,
  kExitTracking = 4,
};

/// Entry point of the `deftrack` command line (`sim`, `track`, `eval`,
/// `full`). Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace deftrack
