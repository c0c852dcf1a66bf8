#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mpcl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// Entry point shared by the executable and the smoke tests. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Markdown page describing every subcommand, flag and config key.
std::string reference_page();

}  // namespace mpcl::cli
