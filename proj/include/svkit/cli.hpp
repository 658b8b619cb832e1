#pragma once

#include <string>
#include <vector>

namespace svkit::cli {

/// Full command-line front end (subcommands: synth, features, train, verify,
/// evaluate, gradcheck). Returns the process exit code: 0 success, 1
/// usage/config error, 2 data error, 3 numerical failure.
int run(const std::vector<std::string>& args);

}  // namespace svkit::cli
