#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dualseg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

/// Entry point shared by the `dualseg` executable and the tests. `args`
/// excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dualseg::cli
