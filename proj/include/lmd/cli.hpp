#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lmd::cli {

/// Exit codes: 0 success, 1 internal failure, 2 validation error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;

/// Entry point of the `lmdkit` tool. `args` excludes the program name.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace lmd::cli
