#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace iterchat {

// Entry point of the `iterchat` command. Returns 0 on success, 1 when the
// operation failed, 2 on usage errors. Primary output goes to `out`,
// diagnostics and the JSON error summary to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace iterchat
