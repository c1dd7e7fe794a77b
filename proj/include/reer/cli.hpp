#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace reer {

/// Exit codes: 0 success, 1 runtime or data failure, 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Convenience for tests; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace reer
