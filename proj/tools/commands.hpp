// SPDX-License-Identifier: Apache-2.0
/**
 * @file   commands.hpp
 * @brief  Command-line front end: subcommand dispatch and exit codes.
 *
 * Subcommands: synth, extract, folds, train, predict, fuse, report,
 * inspect. Every command is deterministic given its inputs, configuration,
 * and seed. Exit codes separate configuration problems from data problems
 * from partial completion, so scripted pipelines can branch on the kind of
 * failure.
 */

#ifndef SKALD_TOOLS_COMMANDS_HPP
#define SKALD_TOOLS_COMMANDS_HPP

namespace skald {

inline constexpr int kExitOk = 0;       // full success
inline constexpr int kExitInternal = 1; // unexpected failure
inline constexpr int kExitConfig = 2;   // bad flags, keys, or bounds
inline constexpr int kExitData = 3;     // unreadable or inconsistent data
inline constexpr int kExitPartial = 4;  // finished, but some clips failed

int run_cli(int argc, const char *const *argv);

} // namespace skald

#endif // SKALD_TOOLS_COMMANDS_HPP
