#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace airpcm {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitDivergence = 3,
};

// Runs one subcommand. `args` excludes the program name. Messages go to
// `out` and `err`; the return value is the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace airpcm
