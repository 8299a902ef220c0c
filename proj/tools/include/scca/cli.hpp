#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace scca::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Runs one command; args excludes the program name. Returns 0 on success, 1
// for usage or validation errors and 2 for runtime failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scca::cli
