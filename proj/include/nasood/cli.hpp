#pragma once

#include <ostream>

namespace nasood::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 usage error (unknown flag,
/// unknown config key, invalid configuration value).
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `nasood` tool. Subcommands: synth-data, search, retrain,
/// analyze {ops,temporal,dot,table,alpha}, cross-eval.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nasood::cli
