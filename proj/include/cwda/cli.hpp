#pragma once

// Command-line front end: gen, train, ablate, eval, gradcheck,
// decay-compare and rerun. Every command that writes files leaves a
// manifest.json next to them from which `rerun` can reproduce the outputs.

#include <string>
#include <vector>

namespace cwda::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kNumerical = 2, kIo = 3 };

/// Runs one command line (without the program name). Never throws; errors
/// are reported on stderr and mapped to an exit code.
int run(const std::vector<std::string>& args);

/// Relative paths are resolved against $CWDA_OUTPUT_ROOT when it is set.
std::string resolve_path(const std::string& path);

}  // namespace cwda::cli
