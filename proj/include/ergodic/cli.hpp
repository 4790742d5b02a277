#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace ergodic::cli
{

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/**
 * The `ergo` command line: synth, learn, rollout, eval, compare and serve.
 * `args` excludes the program name. Returns kExitOk, kExitUsage on bad
 * arguments, or kExitFailure when the command itself fails.
 */
int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace ergodic::cli
