#pragma once

#include <string>
#include <vector>

namespace psgcd {

// Executes one CLI command. args excludes the program name. Returns the
// process exit code: 0 success, 1 runtime failure, 2 usage/config error.
int run_cli(const std::vector<std::string>& args);

}  // namespace psgcd
