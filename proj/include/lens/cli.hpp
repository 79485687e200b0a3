#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace lens {

/// Runs one command line (without the program name). Returns the exit code:
/// 0 on success, 1 on a runtime failure, 2 on a usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lens
