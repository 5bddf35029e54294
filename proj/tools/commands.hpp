#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace qsf::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

// Runs one command line (without the program name) and returns its exit code.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace qsf::cli
