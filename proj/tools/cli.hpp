#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sdlab {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitViolation = 2 };

// Parses and runs one subcommand. Diagnostics go to `err`, summaries to
// `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sdlab
