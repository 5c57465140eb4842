#pragma once

#include <string>
#include <vector>

namespace aifn {

// Entry point behind the aifn executable. Returns the process exit code:
// 0 on success, 1 on a usage problem (help text included), 2 when a command
// fails while running.
int run_cli(int argc, char** argv);

// Same contract with the arguments passed directly, program name excluded.
// Lets tests drive the command surface in-process.
int run_cli(const std::vector<std::string>& args);

}  // namespace aifn
