#pragma once

#include <string>
#include <vector>

namespace emma {

// Runs one command-line invocation. `args` holds the arguments without the
// program name. Returns the process exit code: 0 on success, 1 on an internal
// error (reported as a single "error: ..." line on stderr), 2 on a usage
// error or a missing prerequisite file (reported as a single line naming the
// problem).
int run_cli(const std::vector<std::string>& args);

}  // namespace emma
