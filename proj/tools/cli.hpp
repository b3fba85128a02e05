#pragma once

// Command-line front end: train, enhance, evaluate, gradcheck, params,
// synth-data. Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <iosfwd>

namespace cmgan::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cmgan::cli
