#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace octgan::cli {

/// Runs the command line in `args` (args[0] is the program name). Returns 0 on success,
/// 2 on usage errors and 1 on runtime failures.
int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

/// Shortest fixed-point rendering with at least one decimal: 0 -> "0.0", 12.5 -> "12.5".
std::string format_metric(double v);

} // namespace octgan::cli
