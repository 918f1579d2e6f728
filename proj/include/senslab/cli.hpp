#pragma once

#include <iosfwd>

namespace senslab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

// Entry point of the `senslab` executable. Returns the process exit code:
// 0 on success, 2 for configuration or usage errors, 3 for numeric failures.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace senslab::cli
