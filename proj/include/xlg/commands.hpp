#pragma once

#include <string>
#include <vector>

namespace xlg {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `xlg` tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace xlg
