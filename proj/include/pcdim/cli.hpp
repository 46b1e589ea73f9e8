#pragma once

#include <string>
#include <vector>

namespace pcdim {

// Exit codes returned by run_cli.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitInternal = 3 };

// Runs `pcdim <subcommand> ...`. args[0] is the program name.
int run_cli(std::vector<std::string> args);
int run_cli(int argc, char** argv);

}  // namespace pcdim
