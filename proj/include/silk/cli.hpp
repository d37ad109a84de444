#pragma once

#include <ostream>

namespace silk {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the `silk` command line tool with subcommands train,
// extract, match, eval-hpatches and viz.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace silk
