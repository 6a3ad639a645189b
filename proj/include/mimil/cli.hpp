#pragma once

#include <iosfwd>

namespace mimil::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

// Entry point of the `mimil` tool. Errors are reported on `err` and mapped
// to the exit codes above.
int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace mimil::cli
