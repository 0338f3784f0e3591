#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bivas::cli {

// Exit codes: 0 success, 1 validation error, 2 usage or IO error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

// Runs the command line; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bivas::cli
