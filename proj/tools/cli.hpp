#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mvi::cli {

// Runs the mvi command line. args[0] is the program name. Returns the process
// exit code: 0 success, 1 input/validation error, 2 internal invariant violation.
// Errors and warnings are written to `err` as one JSON object per line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mvi::cli
