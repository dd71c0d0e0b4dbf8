#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hmhi {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitCheckFailed = 2;

/// Entry point behind the `hmhi` executable. `args` excludes the program name.
/// Subcommands: generate, train, eval, gradcheck.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hmhi
