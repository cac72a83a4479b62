#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace raffnet::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kDiverged = 3 };

// Entry point shared by the binary and the tests. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace raffnet::cli
