#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace halodet {

// Entry point of the halodet tool. `args` excludes the program name.
// Returns the process exit status: 0 on success, 1 on an operational error,
// 2 when the input or the invocation is invalid.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace halodet
