#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nbvlearn {

/// Exit codes: 0 success, 1 runtime error, 2 usage error.
int cli_main(int argc, const char* const* argv);
/// Same, with explicit streams; args exclude the program name.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nbvlearn
