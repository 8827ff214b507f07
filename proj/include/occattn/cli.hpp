#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace occattn {

/// Exit codes of the command-line tool.
inline constexpr int kExitSuccess = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command (gen-data, train, reconstruct, eval, report, ensemble). args excludes
/// the program name. Normal output goes to out, diagnostics to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace occattn
