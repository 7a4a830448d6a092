#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vclip::cli {

/// Runs one vclip command. Returns the process exit code; errors are reported
/// on `err` rather than thrown.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vclip::cli
