#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mile::cli {

/// Runs one milelab command. argv[0] is the program name. Returns the process
/// exit status: 0 on success, 2 for configuration/usage/input errors, 3 for
/// numeric failures, 4 for I/O failures, 1 otherwise. Failures print one line
/// "error: category=<kind> message=<text>" to `err`.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

int exit_code_for(const char* category);

}  // namespace mile::cli
