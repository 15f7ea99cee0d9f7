#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace adma::cli {

/// Exit codes returned by cli_main.
enum ExitCode : int { kOk = 0, kValidation = 1, kRuntime = 2 };

/// Subcommands: corpus gen, train, sample, eval, sweep, gradcheck, ctc-oracle, plotdata.
/// args[0] is the program name.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_main(int argc, const char* const* argv);

}  // namespace adma::cli
