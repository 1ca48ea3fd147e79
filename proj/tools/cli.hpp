#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace spt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

// Parses argv, runs one subcommand and returns the process exit code.
// Diagnostics go to `err`, short summaries to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace spt::cli
