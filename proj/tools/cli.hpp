#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace defer::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kEvaluation = 3 };

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace defer::cli
