#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mmsm {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitError = 1, kExitUsage = 2, kExitFormat = 3, kExitDivergence = 4 };

/// Runs the `mmsm` command line. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmsm
