#pragma once

#include <string>
#include <vector>

namespace ghostlab::cli {

/// Runs one subcommand; `args` excludes the program name. Returns the process exit status.
int run(const std::vector<std::string>& args);

}  // namespace ghostlab::cli
