#pragma once

#include <string>
#include <vector>

namespace dyl {

/// Entry point behind the `dyl` binary. args[0] is the program name.
/// Returns 0 on success, 1 on runtime failure, 2 on usage errors.
int run_cli(const std::vector<std::string>& args);

/// Reads a CSV written by this tool (header row, leading index column).
std::vector<std::vector<double>> read_numeric_csv(const std::string& path);

}  // namespace dyl
