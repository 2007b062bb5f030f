#pragma once

#include <string>
#include <vector>

namespace qdt::cli {

// Exit codes, also listed in --help and docs/MANUAL.md.
enum ExitCode {
  kOk = 0,
  kInternalError = 1,
  kUsageError = 2,
  kIoError = 3,
  kSchemaError = 4,
  kDivergenceError = 5,
};

// Full command-line driver; args excludes the program name. Never throws;
// failures map to the exit codes above with a diagnostic on stderr.
int run(const std::vector<std::string>& args);

}  // namespace qdt::cli
