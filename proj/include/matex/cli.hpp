#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace matex {

// Exit codes: 0 success, 1 invalid arguments or failed validation, 2 runtime error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace matex
