#pragma once

#include <string>
#include <vector>

namespace parld {

// Entry point behind the `parld` binary. `args` excludes the program name.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace parld
