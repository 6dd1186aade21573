#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace modelctl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Full command line, argv[0] included. Diagnostics go to `err`, the resolved
// configuration and progress to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace modelctl::cli
