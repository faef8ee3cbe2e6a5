#pragma once

#include <string>
#include <vector>

namespace roomtwin {

// Command-line entry point. Returns 0 on success, 2 on usage errors and 1 on
// runtime errors (diagnostics go to standard error).
int cli_main(int argc, char** argv);
// Same, with the arguments after the program name.
int cli_main(const std::vector<std::string>& args);

}  // namespace roomtwin
