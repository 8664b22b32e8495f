#pragma once

#include <string>
#include <vector>

namespace longipred::cli {

/// Entry point shared by the binary and the tests. `args` excludes the
/// program name. Returns the process exit code: 0 success, 2 validation or
/// input error, 3 non-convergence without --allow-unconverged.
int run(const std::vector<std::string>& args);

}  // namespace longipred::cli
