#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace s2tl {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Output directories default to $S2TL_OUTPUT_ROOT/<command> (or ./runs).
std::string output_root();

/// Runs one command line (without the program name) and returns the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace s2tl
