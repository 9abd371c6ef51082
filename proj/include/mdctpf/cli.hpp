#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mdctpf {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumeric = 4,
};

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mdctpf
