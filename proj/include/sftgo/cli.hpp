#pragma once

#include <string>
#include <vector>

namespace sftgo::cli {

// Entry point behind the sftgo binary; exposed so tests can drive the CLI
// in-process. Exit codes: 0 success, 1 validation/usage error, 2 runtime
// failure (including failed theory verification).
int cli_main(int argc, const char* const* argv);
int cli_main(const std::vector<std::string>& args); // args without argv[0]

} // namespace sftgo::cli
