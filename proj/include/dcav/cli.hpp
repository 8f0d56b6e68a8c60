// Command-line surface. Exit codes: 0 success, 2 input error, 3 fit failure.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dcav::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitFit = 3;

/// Runs one command; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dcav::cli
