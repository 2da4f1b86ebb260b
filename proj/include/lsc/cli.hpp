#ifndef LSC_CLI_HPP
#define LSC_CLI_HPP

#include <string>
#include <vector>

namespace lsc {

// Dispatches one subcommand; exit 0 on success, 1 on validation/usage errors,
// 2 on runtime faults. Diagnostics go to stderr, results to files.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args without the program name

}  // namespace lsc

#endif
