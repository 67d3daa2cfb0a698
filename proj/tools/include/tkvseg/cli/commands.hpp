#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tkvseg::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitUsage = 2,  // configuration, usage and I/O errors
  kExitNumeric = 3,
};

// Parses `args` (without the program name) and runs one subcommand:
// synth | preprocess | train | infer | eval | gradcheck.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tkvseg::cli
