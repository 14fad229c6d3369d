#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace almond {

// Exit codes of run_cli.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Subcommands: preprocess, synth, ingest, split, train, evaluate, predict,
// trace. `--config FILE` reads `key = value` lines ([train] sections or
// `train.key` names for subcommand flags); flags on the command line win.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// argv[0] is supplied.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace almond
