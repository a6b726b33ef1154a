#pragma once

#include <string>

namespace tdn {

// Full CLI entry point. Returns the process exit code: 0 success,
// 1 validation error, 2 internal error.
int run_cli(int argc, const char* const* argv);

// Rendered --help output covering all subcommands (used by the doc test).
std::string cli_help_text();

}  // namespace tdn
